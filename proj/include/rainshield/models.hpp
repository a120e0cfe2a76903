#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rainshield/kernels.hpp"
#include "rainshield/tensor.hpp"

namespace rainshield {

enum class ModelKind { seg, derain };
std::string_view to_string(ModelKind k);

/// Encoder-decoder: three stride-2 stages down, three nearest-neighbor stages
/// up with additive skips, 1x1 classifier. Channel widths w, 2w, 4w, 4w.
struct SegDescriptor {
  int in_channels = 3;
  int num_classes = 5;
  int width = 12;

  std::string str() const;
  static SegDescriptor parse(std::string_view s);
  bool operator==(const SegDescriptor&) const = default;
};

enum class DerainMode { residual, direct };

/// Head conv, `blocks` residual conv blocks, 3-channel tail.
/// residual: output = clip(x - tail, 0, 1); direct: output = clip(tail, 0, 1).
struct DerainDescriptor {
  int channels = 16;
  int blocks = 6;
  DerainMode mode = DerainMode::residual;

  std::string str() const;
  static DerainDescriptor parse(std::string_view s);
  bool operator==(const DerainDescriptor&) const = default;
};

struct LayerSlot {
  ConvGeometry geom;
  std::size_t offset = 0;  // weights, then biases
};

/// Flat parameter vector with per-layer views.
template <typename T>
class ParamStore {
 public:
  std::span<const T> params() const { return params_; }
  std::span<T> params() { return params_; }
  std::size_t param_count() const { return params_.size(); }
  std::uint64_t param_hash() const;

 protected:
  std::size_t add_layer(const ConvGeometry& g);
  void he_init(std::uint64_t seed, std::span<const double> layer_gain);
  void set_params(std::vector<T> p);

  std::span<const T> weight(std::size_t l) const {
    return std::span<const T>(params_).subspan(slots_[l].offset, slots_[l].geom.weight_count());
  }
  std::span<const T> bias(std::size_t l) const {
    return std::span<const T>(params_).subspan(slots_[l].offset + slots_[l].geom.weight_count(),
                                               static_cast<std::size_t>(slots_[l].geom.out_channels));
  }
  void conv(std::size_t l, const Tensor<T>& in, Tensor<T>& out) const;
  /// dparams may be empty (input gradient only).
  void conv_back(std::size_t l, const Tensor<T>& in, const Tensor<T>& dout, Tensor<T>* din,
                 std::span<T> dparams) const;

  std::vector<LayerSlot> slots_;
  std::vector<T> params_;
};

template <typename T>
class SegNet : public ParamStore<T> {
 public:
  struct Cache {
    Tensor<T> x0, e0, e1, e1b, e2, e2b, e3, e3b, u2, a7, d2, u1, a8, d1, u0, a9, d0;
  };

  /// Deterministic He initialization.
  SegNet(const SegDescriptor& d, std::uint64_t seed);
  SegNet(const SegDescriptor& d, std::vector<T> params);

  const SegDescriptor& descriptor() const { return desc_; }
  int num_classes() const { return desc_.num_classes; }

  /// x: [n, 3, H, W] with H, W divisible by 8; returns logits [n, K, H, W].
  Tensor<T> forward(const Tensor<T>& x) const;
  Tensor<T> forward(const Tensor<T>& x, Cache& cache) const;
  /// dinput is overwritten when non-null; dparams accumulates when non-empty.
  void backward(const Cache& cache, const Tensor<T>& dlogits, Tensor<T>* dinput,
                std::span<T> dparams) const;

  template <typename U>
  SegNet<U> cast() const {
    std::vector<U> p(this->params_.begin(), this->params_.end());
    return SegNet<U>(desc_, std::move(p));
  }

 private:
  void build();
  void check_input(const Tensor<T>& x) const;
  SegDescriptor desc_;
};

template <typename T>
class DerainNet : public ParamStore<T> {
 public:
  struct Cache {
    Tensor<T> x, x0;
    std::vector<Tensor<T>> h;  // h[0] head output, h[b+1] after block b
    std::vector<Tensor<T>> a;  // block activations
    Tensor<T> tail;
    Tensor<T> pre;             // value before the [0, 1] clip
  };

  DerainNet(const DerainDescriptor& d, std::uint64_t seed);
  DerainNet(const DerainDescriptor& d, std::vector<T> params);

  const DerainDescriptor& descriptor() const { return desc_; }

  /// Restored image in [0, 1], same shape as x.
  Tensor<T> forward(const Tensor<T>& x) const;
  Tensor<T> forward(const Tensor<T>& x, Cache& cache) const;
  /// Rain layer estimate: tail output in residual mode, x - output in direct mode.
  Tensor<T> predicted_rain(const Tensor<T>& x) const;
  void backward(const Cache& cache, const Tensor<T>& dout, Tensor<T>* dinput,
                std::span<T> dparams) const;

  /// Zeroes the tail so the residual model is the identity on [0, 1] inputs.
  void zero_tail();

  template <typename U>
  DerainNet<U> cast() const {
    std::vector<U> p(this->params_.begin(), this->params_.end());
    return DerainNet<U>(desc_, std::move(p));
  }

 private:
  void build();
  void check_input(const Tensor<T>& x) const;
  DerainDescriptor desc_;
};

extern template class SegNet<float>;
extern template class SegNet<double>;
extern template class DerainNet<float>;
extern template class DerainNet<double>;

// ---------------------------------------------------------------------------
// Checkpoints: text header (key=value lines, blank line terminates) followed by
// the raw little-endian float32 parameter payload.

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

struct CheckpointHeader {
  int format_version = kCheckpointVersion;
  ModelKind kind = ModelKind::seg;
  std::string descriptor;
  std::string config_hash;
  std::size_t param_count = 0;
  std::string payload_checksum;
};

void save_checkpoint(const std::filesystem::path& path, const SegNet<float>& model,
                     std::string_view config_hash = {});
void save_checkpoint(const std::filesystem::path& path, const DerainNet<float>& model,
                     std::string_view config_hash = {});

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// When `expected` is given, the stored descriptor must match it.
SegNet<float> load_seg_checkpoint(const std::filesystem::path& path,
                                  const SegDescriptor* expected = nullptr);
DerainNet<float> load_derain_checkpoint(const std::filesystem::path& path,
                                        const DerainDescriptor* expected = nullptr);

}  // namespace rainshield
