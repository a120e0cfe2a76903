#pragma once

#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "rainshield/tensor.hpp"

namespace rainshield {

/// Per-sample mean cross-entropy over non-ignored pixels. When dlogits is
/// non-null it receives grad_scale * d(sum of per-sample losses)/dlogits.
/// Throws std::domain_error when a sample has no valid pixel.
template <typename T>
std::vector<double> cross_entropy(const Tensor<T>& logits, std::span<const LabelMap> labels,
                                  Tensor<T>* dlogits = nullptr, double grad_scale = 1.0);

/// Per-sample mean over valid pixels of -max(z_y - max_{j != y} z_j, -kappa).
/// kappa must be finite and >= 0.
template <typename T>
std::vector<double> cw_margin_loss(const Tensor<T>& logits, std::span<const LabelMap> labels,
                                   double kappa, Tensor<T>* dlogits = nullptr,
                                   double grad_scale = 1.0);

/// Per-pixel argmax over the class axis.
template <typename T>
std::vector<LabelMap> argmax_labels(const Tensor<T>& logits);

enum class DefenseLossKind { mse, l1, l1_plus_ssim };
std::string_view to_string(DefenseLossKind k);
DefenseLossKind parse_defense_loss(std::string_view s);

struct DefenseLoss {
  DefenseLossKind kind = DefenseLossKind::mse;
  double l1_weight = 1.0;
  double ssim_weight = 1.0;

  /// Batch mean. `grad` (optional) receives d loss / d pred.
  template <typename T>
  double operator()(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* grad = nullptr) const;
};

/// A scalar loss of a model output: returns the value and writes d loss/d output.
template <typename T>
using LossHead = std::function<double(const Tensor<T>& output, Tensor<T>& d_output)>;

template <typename T>
LossHead<T> sum_head();
template <typename T>
LossHead<T> sum_of_squares_head();
/// Batch mean of the per-sample cross-entropy.
template <typename T>
LossHead<T> cross_entropy_head(std::vector<LabelMap> labels);
template <typename T>
LossHead<T> defense_head(DefenseLoss loss, Tensor<T> target);

}  // namespace rainshield
