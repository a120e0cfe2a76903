#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rainshield/models.hpp"
#include "rainshield/tensor.hpp"

namespace rainshield {

enum class AttackMethod { fgsm, bim, pgd, cw };
std::string_view to_string(AttackMethod m);
AttackMethod parse_attack_method(std::string_view s);

/// l-inf bounded iterative sign attack.
struct AttackSpec {
  AttackMethod method = AttackMethod::bim;
  float epsilon = 8.0f / 255.0f;
  float alpha = 0.0f;  // 0 selects the default schedule
  int steps = 5;
  float kappa = 0.0f;
  bool random_init = false;
  std::uint64_t seed = 0;

  static AttackSpec fgsm(float eps);
  static AttackSpec bim(float eps, int steps);
  static AttackSpec pgd(float eps, int steps, std::uint64_t seed);
  static AttackSpec cw(float eps, int steps, float kappa = 0.0f);

  /// Step size actually used: alpha if set, else min(eps, 2.5 eps / K); eps for fgsm.
  float step_size() const;
  /// fgsm forced to K=1, alpha=eps, no random init; pgd forced to random init.
  AttackSpec normalized() const;
  /// Throws std::invalid_argument. eps = 0 is accepted (the degenerate no-op attack).
  void validate() const;
  /// Short label, e.g. "bim5", "pgd10", "cw10", "fgsm".
  std::string name() const;
  /// True when the result depends on the seed.
  bool uses_seed() const { return normalized().random_init; }
};

/// Clamp delta into the eps ball and the box [0,1] - anchor. Feasible deltas are
/// returned bit-identical, and the result satisfies |d| <= eps and
/// anchor + d in [0,1] exactly in float arithmetic.
Image project(const Image& delta, float epsilon, const Image& anchor);

/// anchor + delta, elementwise in float.
Image perturb(const Image& anchor, const Image& delta);

enum class AttackLoss { cross_entropy, cw_margin };

/// Differentiable function of an image batch that an attack climbs.
class AttackTarget {
 public:
  virtual ~AttackTarget() = default;
  /// Per-sample losses; grad (optional) receives d(sum of per-sample losses)/dx.
  virtual std::vector<double> evaluate(const Image& x, std::span<const LabelMap> labels,
                                       AttackLoss loss, float kappa, Image* grad) const = 0;
  virtual Image logits(const Image& x) const = 0;
};

class SegTarget final : public AttackTarget {
 public:
  explicit SegTarget(const SegNet<float>& seg) : seg_(seg) {}
  std::vector<double> evaluate(const Image& x, std::span<const LabelMap> labels, AttackLoss loss,
                               float kappa, Image* grad) const override;
  Image logits(const Image& x) const override { return seg_.forward(x); }

 private:
  const SegNet<float>& seg_;
};

/// Segmentation of the derained input; gradients flow through the derain model.
class DerainSegTarget final : public AttackTarget {
 public:
  DerainSegTarget(const DerainNet<float>& derain, const SegNet<float>& seg)
      : derain_(derain), seg_(seg) {}
  std::vector<double> evaluate(const Image& x, std::span<const LabelMap> labels, AttackLoss loss,
                               float kappa, Image* grad) const override;
  Image logits(const Image& x) const override { return seg_.forward(derain_.forward(x)); }

 private:
  const DerainNet<float>& derain_;
  const SegNet<float>& seg_;
};

/// Gradient signs seen at each step of an attack, used by the mirror variant.
struct NaaTrace {
  float alpha = 0.0f;
  std::vector<Image> signs;
};

/// Negative adversarial attack: returns delta with x + delta the adversarial input.
Image naa_generate(const AttackTarget& target, const Image& x, std::span<const LabelMap> labels,
                   const AttackSpec& spec, NaaTrace* trace = nullptr);

enum class AmaVariant { independent_descent, mirror_of_naa };
std::string_view to_string(AmaVariant v);
AmaVariant parse_ama_variant(std::string_view s);

/// Auxiliary mirror perturbation for the clean image: loss-reducing, same budget
/// and schedule as the paired NAA. mirror_of_naa requires the paired trace.
Image ama_generate(const AttackTarget& target, const Image& clean, std::span<const LabelMap> labels,
                   const AttackSpec& spec, AmaVariant variant, const NaaTrace* trace = nullptr);

}  // namespace rainshield
