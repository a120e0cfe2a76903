#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

namespace rainshield {

enum class OptimizerKind { sgd_momentum, adam };
std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view s);

struct OptimizerParams {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double momentum = 0.9;  // sgd
  double beta1 = 0.9;     // adam
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// First-order optimizer bound to one flat parameter vector.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  /// Parameters receiving updates; the training loops expose this so tests can
  /// check which model an optimizer is allowed to touch.
  std::size_t bound_param_count() const { return params_.size(); }
  const float* bound_data() const { return params_.data(); }
  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }
  virtual void step(std::span<const float> grad) = 0;

 protected:
  Optimizer(std::span<float> params, double lr) : params_(params), lr_(lr) {}
  std::span<float> params_;
  double lr_;
};

std::unique_ptr<Optimizer> make_optimizer(const OptimizerParams& p, std::span<float> params);

}  // namespace rainshield
