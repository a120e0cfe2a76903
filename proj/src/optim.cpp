#include "rainshield/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace rainshield {

std::string_view to_string(OptimizerKind k) {
  return k == OptimizerKind::sgd_momentum ? "sgd_momentum" : "adam";
}

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd_momentum") return OptimizerKind::sgd_momentum;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + std::string(s) + "'");
}

namespace {

class Sgd final : public Optimizer {
 public:
  Sgd(std::span<float> params, const OptimizerParams& p)
      : Optimizer(params, p.learning_rate), mu_(p.momentum), wd_(p.weight_decay),
        v_(params.size(), 0.0f) {}

  void step(std::span<const float> grad) override {
    if (grad.size() != params_.size()) throw std::invalid_argument("sgd: gradient size mismatch");
    const float lr = static_cast<float>(lr_), mu = static_cast<float>(mu_), wd = static_cast<float>(wd_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const float g = grad[i] + wd * params_[i];
      v_[i] = mu * v_[i] + g;
      params_[i] -= lr * v_[i];
    }
  }

 private:
  double mu_, wd_;
  std::vector<float> v_;
};

class Adam final : public Optimizer {
 public:
  Adam(std::span<float> params, const OptimizerParams& p)
      : Optimizer(params, p.learning_rate), b1_(p.beta1), b2_(p.beta2), eps_(p.eps),
        wd_(p.weight_decay), m_(params.size(), 0.0f), v_(params.size(), 0.0f) {}

  void step(std::span<const float> grad) override {
    if (grad.size() != params_.size()) throw std::invalid_argument("adam: gradient size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    const float step = static_cast<float>(lr_ * std::sqrt(c2) / c1);
    const float b1 = static_cast<float>(b1_), b2 = static_cast<float>(b2_);
    const float eps = static_cast<float>(eps_ * std::sqrt(c2)), wd = static_cast<float>(wd_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const float g = grad[i] + wd * params_[i];
      m_[i] = b1 * m_[i] + (1.0f - b1) * g;
      v_[i] = b2 * v_[i] + (1.0f - b2) * g * g;
      params_[i] -= step * m_[i] / (std::sqrt(v_[i]) + eps);
    }
  }

 private:
  double b1_, b2_, eps_, wd_;
  long t_ = 0;
  std::vector<float> m_, v_;
};

}  // namespace

std::unique_ptr<Optimizer> make_optimizer(const OptimizerParams& p, std::span<float> params) {
  if (!(p.learning_rate >= 0.0)) throw std::invalid_argument("optimizer: learning_rate must be >= 0");
  if (p.kind == OptimizerKind::sgd_momentum) return std::make_unique<Sgd>(params, p);
  return std::make_unique<Adam>(params, p);
}

}  // namespace rainshield
