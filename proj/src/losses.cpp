#include "rainshield/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "rainshield/metrics.hpp"

namespace rainshield {

namespace {

template <typename T>
void check_logits(const Tensor<T>& logits, std::span<const LabelMap> labels) {
  if (static_cast<int>(labels.size()) != logits.n)
    throw ShapeError("loss: " + std::to_string(labels.size()) + " label maps for batch of " +
                     std::to_string(logits.n));
  for (const auto& l : labels)
    if (l.h != logits.h || l.w != logits.w) throw ShapeError("loss: label map shape mismatch");
}

template <typename T>
std::size_t valid_count(const LabelMap& y, int classes, int sample) {
  std::size_t n = 0;
  for (auto id : y.ids) {
    if (id == LabelMap::kIgnore) continue;
    if (id >= classes)
      throw std::out_of_range("loss: label " + std::to_string(id) + " >= num classes " +
                              std::to_string(classes));
    ++n;
  }
  if (n == 0)
    throw std::domain_error("loss: every pixel of sample " + std::to_string(sample) +
                            " is ignored");
  return n;
}

}  // namespace

template <typename T>
std::vector<double> cross_entropy(const Tensor<T>& logits, std::span<const LabelMap> labels,
                                  Tensor<T>* dlogits, double grad_scale) {
  check_logits(logits, labels);
  if (dlogits) *dlogits = Tensor<T>::like(logits);
  const int k = logits.c;
  const std::size_t plane = logits.plane();
  std::vector<double> out(static_cast<std::size_t>(logits.n));
  std::vector<double> z(static_cast<std::size_t>(k));
  for (int i = 0; i < logits.n; ++i) {
    const auto& y = labels[static_cast<std::size_t>(i)];
    const double inv = 1.0 / static_cast<double>(valid_count<T>(y, k, i));
    const T* s = logits.sample(i);
    T* g = dlogits ? dlogits->sample(i) : nullptr;
    double total = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
      const int label = y.ids[p];
      if (label == LabelMap::kIgnore) continue;
      double zmax = -INFINITY;
      for (int c = 0; c < k; ++c) {
        z[static_cast<std::size_t>(c)] = s[static_cast<std::size_t>(c) * plane + p];
        zmax = std::max(zmax, z[static_cast<std::size_t>(c)]);
      }
      double se = 0.0;
      for (int c = 0; c < k; ++c) se += std::exp(z[static_cast<std::size_t>(c)] - zmax);
      const double lse = zmax + std::log(se);
      total += lse - z[static_cast<std::size_t>(label)];
      if (g) {
        for (int c = 0; c < k; ++c) {
          const double prob = std::exp(z[static_cast<std::size_t>(c)] - lse);
          g[static_cast<std::size_t>(c) * plane + p] =
              static_cast<T>(grad_scale * inv * (prob - (c == label ? 1.0 : 0.0)));
        }
      }
    }
    out[static_cast<std::size_t>(i)] = total * inv;
  }
  return out;
}

template <typename T>
std::vector<double> cw_margin_loss(const Tensor<T>& logits, std::span<const LabelMap> labels,
                                   double kappa, Tensor<T>* dlogits, double grad_scale) {
  if (!std::isfinite(kappa) || kappa < 0.0)
    throw std::invalid_argument("cw_margin_loss: kappa must be finite and >= 0");
  check_logits(logits, labels);
  if (logits.c < 2) throw std::invalid_argument("cw_margin_loss: need >= 2 classes");
  if (dlogits) *dlogits = Tensor<T>::like(logits);
  const int k = logits.c;
  const std::size_t plane = logits.plane();
  std::vector<double> out(static_cast<std::size_t>(logits.n));
  for (int i = 0; i < logits.n; ++i) {
    const auto& y = labels[static_cast<std::size_t>(i)];
    const double inv = 1.0 / static_cast<double>(valid_count<T>(y, k, i));
    const T* s = logits.sample(i);
    T* g = dlogits ? dlogits->sample(i) : nullptr;
    double total = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
      const int label = y.ids[p];
      if (label == LabelMap::kIgnore) continue;
      int runner = -1;
      double best = -INFINITY;
      for (int c = 0; c < k; ++c) {
        if (c == label) continue;
        const double v = s[static_cast<std::size_t>(c) * plane + p];
        if (v > best) {
          best = v;
          runner = c;
        }
      }
      const double margin = static_cast<double>(s[static_cast<std::size_t>(label) * plane + p]) - best;
      if (margin >= -kappa) {
        total += -margin;
        if (g) {
          g[static_cast<std::size_t>(label) * plane + p] = static_cast<T>(-grad_scale * inv);
          g[static_cast<std::size_t>(runner) * plane + p] = static_cast<T>(grad_scale * inv);
        }
      } else {
        total += kappa;
      }
    }
    out[static_cast<std::size_t>(i)] = total * inv;
  }
  return out;
}

template <typename T>
std::vector<LabelMap> argmax_labels(const Tensor<T>& logits) {
  std::vector<LabelMap> out;
  out.reserve(static_cast<std::size_t>(logits.n));
  const std::size_t plane = logits.plane();
  for (int i = 0; i < logits.n; ++i) {
    LabelMap m(logits.h, logits.w);
    const T* s = logits.sample(i);
    for (std::size_t p = 0; p < plane; ++p) {
      int arg = 0;
      T best = s[p];
      for (int c = 1; c < logits.c; ++c) {
        const T v = s[static_cast<std::size_t>(c) * plane + p];
        if (v > best) {
          best = v;
          arg = c;
        }
      }
      m.ids[p] = static_cast<std::uint8_t>(arg);
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::string_view to_string(DefenseLossKind k) {
  switch (k) {
    case DefenseLossKind::mse: return "mse";
    case DefenseLossKind::l1: return "l1";
    case DefenseLossKind::l1_plus_ssim: return "l1_plus_ssim";
  }
  return "mse";
}

DefenseLossKind parse_defense_loss(std::string_view s) {
  if (s == "mse") return DefenseLossKind::mse;
  if (s == "l1") return DefenseLossKind::l1;
  if (s == "l1_plus_ssim") return DefenseLossKind::l1_plus_ssim;
  throw std::invalid_argument("unknown defense loss '" + std::string(s) + "'");
}

template <typename T>
double DefenseLoss::operator()(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* grad) const {
  require_same_shape(pred, target, "defense loss");
  const double inv = 1.0 / static_cast<double>(pred.size());
  if (grad) *grad = Tensor<T>::like(pred);
  double loss = 0.0;
  switch (kind) {
    case DefenseLossKind::mse:
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
        loss += d * d;
        if (grad) grad->data[i] = static_cast<T>(2.0 * d * inv);
      }
      return loss * inv;
    case DefenseLossKind::l1:
    case DefenseLossKind::l1_plus_ssim: {
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
        loss += std::abs(d);
        if (grad) grad->data[i] = static_cast<T>(l1_weight * inv * ((d > 0) - (d < 0)));
      }
      loss *= inv * l1_weight;
      if (kind == DefenseLossKind::l1) return loss;
      Tensor<T> g_ssim;
      const double s = ssim_with_grad(pred, target, g_ssim);
      if (grad)
        for (std::size_t i = 0; i < pred.size(); ++i)
          grad->data[i] -= static_cast<T>(ssim_weight * g_ssim.data[i]);
      return loss + ssim_weight * (1.0 - s);
    }
  }
  return loss;
}

template <typename T>
LossHead<T> sum_head() {
  return [](const Tensor<T>& out, Tensor<T>& d) {
    d = Tensor<T>::like(out, T(1));
    double s = 0.0;
    for (auto v : out.data) s += v;
    return s;
  };
}

template <typename T>
LossHead<T> sum_of_squares_head() {
  return [](const Tensor<T>& out, Tensor<T>& d) {
    d = Tensor<T>::like(out);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      s += static_cast<double>(out.data[i]) * out.data[i];
      d.data[i] = T(2) * out.data[i];
    }
    return s;
  };
}

template <typename T>
LossHead<T> cross_entropy_head(std::vector<LabelMap> labels) {
  return [labels = std::move(labels)](const Tensor<T>& out, Tensor<T>& d) {
    const double scale = 1.0 / static_cast<double>(out.n);
    const auto per = cross_entropy(out, labels, &d, scale);
    double s = 0.0;
    for (double v : per) s += v;
    return s * scale;
  };
}

template <typename T>
LossHead<T> defense_head(DefenseLoss loss, Tensor<T> target) {
  return [loss, target = std::move(target)](const Tensor<T>& out, Tensor<T>& d) {
    return loss(out, target, &d);
  };
}

#define RAINSHIELD_INSTANTIATE(T)                                                              \
  template std::vector<double> cross_entropy<T>(const Tensor<T>&, std::span<const LabelMap>,  \
                                                Tensor<T>*, double);                          \
  template std::vector<double> cw_margin_loss<T>(const Tensor<T>&, std::span<const LabelMap>, \
                                                 double, Tensor<T>*, double);                 \
  template std::vector<LabelMap> argmax_labels<T>(const Tensor<T>&);                          \
  template double DefenseLoss::operator()<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>*)  \
      const;                                                                                  \
  template LossHead<T> sum_head<T>();                                                         \
  template LossHead<T> sum_of_squares_head<T>();                                              \
  template LossHead<T> cross_entropy_head<T>(std::vector<LabelMap>);                          \
  template LossHead<T> defense_head<T>(DefenseLoss, Tensor<T>);

RAINSHIELD_INSTANTIATE(float)
RAINSHIELD_INSTANTIATE(double)
#undef RAINSHIELD_INSTANTIATE

}  // namespace rainshield
