#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rainshield/tensor.hpp"

namespace rainshield {

/// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return classes_; }
  std::uint64_t count(int gt, int pred) const {
    return counts_[static_cast<std::size_t>(gt) * classes_ + pred];
  }
  std::uint64_t total() const;

  /// Adds the joint histogram of (gt, pred); pixels whose gt is the ignore id
  /// are skipped. Throws std::out_of_range on ids >= num_classes.
  void accumulate(const LabelMap& pred, const LabelMap& gt);
  void merge(const ConfusionMatrix& other);

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int classes_;
  std::vector<std::uint64_t> counts_;
};

struct ClassStats {
  int class_id = 0;
  double iou = 0.0;
  double acc = 0.0;
  bool in_gt = false;
  bool in_pred = false;
};

// Averaging conventions: mIoU averages over classes that appear in gt or in
// the predictions; mAcc averages over classes that appear in gt (accuracy is
// undefined otherwise). All three throw std::domain_error on an empty matrix.
double miou(const ConfusionMatrix& cm);
double macc(const ConfusionMatrix& cm);
double allacc(const ConfusionMatrix& cm);
std::vector<ClassStats> per_class(const ConfusionMatrix& cm);

inline constexpr double kPsnrCap = 100.0;
inline constexpr const char* kMiouConvention = "union-present";
inline constexpr const char* kMaccConvention = "gt-present";

/// 10 log10(peak^2 / MSE) over every element; kPsnrCap when MSE == 0.
double psnr(const Image& a, const Image& b, double peak = 1.0);
/// Per-sample PSNR for batched tensors.
std::vector<double> psnr_per_sample(const Image& a, const Image& b, double peak = 1.0);

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Mean structural similarity, Gaussian window, 'valid' extent; computed per
/// channel and averaged, then averaged over samples.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimParams& p = {});

/// Per-sample SSIM.
template <typename T>
std::vector<double> ssim_per_sample(const Tensor<T>& a, const Tensor<T>& b,
                                    const SsimParams& p = {});

/// SSIM together with d(mean SSIM over the batch)/da.
template <typename T>
double ssim_with_grad(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& grad_a,
                      const SsimParams& p = {});

}  // namespace rainshield
