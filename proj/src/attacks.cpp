#include "rainshield/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "rainshield/losses.hpp"

namespace rainshield {

std::string_view to_string(AttackMethod m) {
  switch (m) {
    case AttackMethod::fgsm: return "fgsm";
    case AttackMethod::bim: return "bim";
    case AttackMethod::pgd: return "pgd";
    case AttackMethod::cw: return "cw";
  }
  return "bim";
}

AttackMethod parse_attack_method(std::string_view s) {
  if (s == "fgsm") return AttackMethod::fgsm;
  if (s == "bim") return AttackMethod::bim;
  if (s == "pgd") return AttackMethod::pgd;
  if (s == "cw") return AttackMethod::cw;
  throw std::invalid_argument("unknown attack method '" + std::string(s) + "'");
}

AttackSpec AttackSpec::fgsm(float eps) {
  AttackSpec s;
  s.method = AttackMethod::fgsm;
  s.epsilon = eps;
  s.steps = 1;
  return s;
}

AttackSpec AttackSpec::bim(float eps, int steps) {
  AttackSpec s;
  s.method = AttackMethod::bim;
  s.epsilon = eps;
  s.steps = steps;
  return s;
}

AttackSpec AttackSpec::pgd(float eps, int steps, std::uint64_t seed) {
  AttackSpec s;
  s.method = AttackMethod::pgd;
  s.epsilon = eps;
  s.steps = steps;
  s.random_init = true;
  s.seed = seed;
  return s;
}

AttackSpec AttackSpec::cw(float eps, int steps, float kappa) {
  AttackSpec s;
  s.method = AttackMethod::cw;
  s.epsilon = eps;
  s.steps = steps;
  s.kappa = kappa;
  return s;
}

float AttackSpec::step_size() const {
  if (method == AttackMethod::fgsm) return epsilon;
  if (alpha > 0.0f) return alpha;
  return std::min(epsilon, 2.5f * epsilon / static_cast<float>(std::max(steps, 1)));
}

AttackSpec AttackSpec::normalized() const {
  AttackSpec s = *this;
  if (s.method == AttackMethod::fgsm) {
    s.steps = 1;
    s.random_init = false;
  }
  if (s.method == AttackMethod::pgd) s.random_init = true;
  s.alpha = s.step_size();
  return s;
}

void AttackSpec::validate() const {
  if (!(epsilon >= 0.0f && epsilon <= 1.0f))
    throw std::invalid_argument("attack: epsilon must lie in [0, 1], got " + std::to_string(epsilon));
  if (!(alpha >= 0.0f)) throw std::invalid_argument("attack: alpha must be >= 0");
  if (alpha > epsilon)
    throw std::invalid_argument("attack: alpha " + std::to_string(alpha) + " exceeds epsilon " +
                                std::to_string(epsilon));
  if (steps < 1) throw std::invalid_argument("attack: steps must be >= 1");
  if (!std::isfinite(kappa) || kappa < 0.0f)
    throw std::invalid_argument("attack: kappa must be finite and >= 0");
}

std::string AttackSpec::name() const {
  const auto n = normalized();
  if (n.method == AttackMethod::fgsm) return "fgsm";
  return std::string(to_string(n.method)) + std::to_string(n.steps);
}

namespace {

// Both the stored perturbation and the realized difference fl(a + r) - a must
// stay within eps, and fl(a + r) within the unit box.
bool admissible(float a, float r, float eps) {
  const float s = a + r;
  return std::abs(r) <= eps && s >= 0.0f && s <= 1.0f &&
         std::abs(static_cast<double>(s) - static_cast<double>(a)) <= static_cast<double>(eps);
}

}  // namespace

Image project(const Image& delta, float epsilon, const Image& anchor) {
  require_same_shape(delta, anchor, "project");
  if (!(epsilon >= 0.0f)) throw std::invalid_argument("project: epsilon must be >= 0");
  Image out = Image::like(delta);
  for (std::size_t i = 0; i < delta.size(); ++i) {
    const float a = anchor.data[i];
    if (!(a >= 0.0f && a <= 1.0f)) throw std::domain_error("project: anchor outside [0, 1]");
    const float d = delta.data[i];
    if (admissible(a, d, epsilon)) {
      out.data[i] = d;
      continue;
    }
    const float c = std::clamp(std::isnan(d) ? 0.0f : d, -epsilon, epsilon);
    if (admissible(a, c, epsilon)) {
      out.data[i] = c;
      continue;
    }
    float r = std::clamp(a + c, 0.0f, 1.0f) - a;
    // rounding can leave r a hair outside either constraint
    while (!admissible(a, r, epsilon)) r = std::nextafter(r, 0.0f);
    out.data[i] = r;
  }
  return out;
}

Image perturb(const Image& anchor, const Image& delta) {
  require_same_shape(anchor, delta, "perturb");
  Image out = Image::like(anchor);
  for (std::size_t i = 0; i < anchor.size(); ++i) out.data[i] = anchor.data[i] + delta.data[i];
  return out;
}

namespace {

std::vector<double> head_loss(const Image& logits, std::span<const LabelMap> labels, AttackLoss loss,
                              float kappa, Image* dlogits) {
  if (loss == AttackLoss::cw_margin) return cw_margin_loss(logits, labels, kappa, dlogits);
  return cross_entropy(logits, labels, dlogits);
}

void check_image(const Image& x, const char* what) {
  for (float v : x.data)
    if (!(v >= 0.0f && v <= 1.0f)) throw std::domain_error(std::string(what) + ": input outside [0, 1]");
}

Image signs_of(const Image& g) {
  Image s = Image::like(g);
  for (std::size_t i = 0; i < g.size(); ++i)
    s.data[i] = static_cast<float>((g.data[i] > 0.0f) - (g.data[i] < 0.0f));
  return s;
}

}  // namespace

std::vector<double> SegTarget::evaluate(const Image& x, std::span<const LabelMap> labels,
                                        AttackLoss loss, float kappa, Image* grad) const {
  if (!grad) return head_loss(seg_.forward(x), labels, loss, kappa, nullptr);
  SegNet<float>::Cache cache;
  const auto logits = seg_.forward(x, cache);
  Image dlogits;
  auto out = head_loss(logits, labels, loss, kappa, &dlogits);
  seg_.backward(cache, dlogits, grad, {});
  return out;
}

std::vector<double> DerainSegTarget::evaluate(const Image& x, std::span<const LabelMap> labels,
                                              AttackLoss loss, float kappa, Image* grad) const {
  if (!grad) return head_loss(logits(x), labels, loss, kappa, nullptr);
  DerainNet<float>::Cache dc;
  SegNet<float>::Cache sc;
  const auto restored = derain_.forward(x, dc);
  const auto z = seg_.forward(restored, sc);
  Image dlogits, drestored;
  auto out = head_loss(z, labels, loss, kappa, &dlogits);
  seg_.backward(sc, dlogits, &drestored, {});
  derain_.backward(dc, drestored, grad, {});
  return out;
}

Image naa_generate(const AttackTarget& target, const Image& x, std::span<const LabelMap> labels,
                   const AttackSpec& spec_in, NaaTrace* trace) {
  spec_in.validate();
  const AttackSpec spec = spec_in.normalized();
  check_image(x, "naa_generate");
  const float eps = spec.epsilon;
  const float alpha = spec.alpha;
  const AttackLoss loss = spec.method == AttackMethod::cw ? AttackLoss::cw_margin : AttackLoss::cross_entropy;

  Image delta = Image::like(x);
  if (spec.random_init) {
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<float> u(-eps, eps);
    for (auto& v : delta.data) v = u(rng);
    delta = project(delta, eps, x);
  }
  if (trace) {
    trace->alpha = alpha;
    trace->signs.clear();
  }
  Image grad;
  for (int k = 0; k < spec.steps; ++k) {
    target.evaluate(perturb(x, delta), labels, loss, spec.kappa, &grad);
    const Image s = signs_of(grad);
    for (std::size_t i = 0; i < delta.size(); ++i) delta.data[i] = delta.data[i] + alpha * s.data[i];
    delta = project(delta, eps, x);
    if (trace) trace->signs.push_back(s);
  }
  return delta;
}

std::string_view to_string(AmaVariant v) {
  return v == AmaVariant::mirror_of_naa ? "mirror_of_naa" : "independent_descent";
}

AmaVariant parse_ama_variant(std::string_view s) {
  if (s == "independent_descent") return AmaVariant::independent_descent;
  if (s == "mirror_of_naa") return AmaVariant::mirror_of_naa;
  throw std::invalid_argument("unknown ama variant '" + std::string(s) + "'");
}

Image ama_generate(const AttackTarget& target, const Image& clean, std::span<const LabelMap> labels,
                   const AttackSpec& spec_in, AmaVariant variant, const NaaTrace* trace) {
  spec_in.validate();
  const AttackSpec spec = spec_in.normalized();
  check_image(clean, "ama_generate");
  const float eps = spec.epsilon;

  if (variant == AmaVariant::mirror_of_naa) {
    if (!trace || trace->signs.empty())
      throw std::invalid_argument("ama_generate: mirror_of_naa needs the paired attack trace");
    Image acc = Image::like(clean);
    for (const auto& s : trace->signs) {
      require_same_shape(s, clean, "ama_generate trace");
      for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] = acc.data[i] + trace->alpha * s.data[i];
    }
    for (auto& v : acc.data) v = -v;
    return project(acc, eps, clean);
  }

  const float alpha = spec.alpha;
  Image delta = Image::like(clean);
  Image grad;
  for (int k = 0; k < spec.steps; ++k) {
    target.evaluate(perturb(clean, delta), labels, AttackLoss::cross_entropy, 0.0f, &grad);
    for (std::size_t i = 0; i < delta.size(); ++i) {
      const float g = grad.data[i];
      delta.data[i] = delta.data[i] - alpha * static_cast<float>((g > 0.0f) - (g < 0.0f));
    }
    delta = project(delta, eps, clean);
  }
  return delta;
}

}  // namespace rainshield
