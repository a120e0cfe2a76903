#include "rainshield/metrics.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "rainshield/kernels.hpp"

namespace rainshield {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : classes_(num_classes),
      counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 1) throw std::invalid_argument("ConfusionMatrix: num_classes < 1");
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& gt) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw ShapeError("ConfusionMatrix::accumulate: label map shape mismatch");
  for (std::size_t i = 0; i < gt.ids.size(); ++i) {
    const int g = gt.ids[i];
    if (g == LabelMap::kIgnore) continue;
    const int p = pred.ids[i];
    if (g >= classes_ || p >= classes_)
      throw std::out_of_range("ConfusionMatrix::accumulate: class id " +
                              std::to_string(std::max(g, p)) + " >= " +
                              std::to_string(classes_));
    ++counts_[static_cast<std::size_t>(g) * classes_ + p];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw std::invalid_argument("ConfusionMatrix::merge: size");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::vector<ClassStats> per_class(const ConfusionMatrix& cm) {
  const int k = cm.num_classes();
  std::vector<ClassStats> out(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    std::uint64_t row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += cm.count(c, j);
      col += cm.count(j, c);
    }
    const std::uint64_t tp = cm.count(c, c);
    auto& s = out[static_cast<std::size_t>(c)];
    s.class_id = c;
    s.in_gt = row > 0;
    s.in_pred = col > 0;
    const std::uint64_t uni = row + col - tp;
    s.iou = uni > 0 ? static_cast<double>(tp) / static_cast<double>(uni) : 0.0;
    s.acc = row > 0 ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
  }
  return out;
}

namespace {
void require_nonempty(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw std::domain_error("metrics on an empty confusion matrix");
}
}  // namespace

double miou(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  double sum = 0.0;
  int n = 0;
  for (const auto& s : per_class(cm)) {
    if (!(s.in_gt || s.in_pred)) continue;
    sum += s.iou;
    ++n;
  }
  return sum / n;
}

double macc(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  double sum = 0.0;
  int n = 0;
  for (const auto& s : per_class(cm)) {
    if (!s.in_gt) continue;
    sum += s.acc;
    ++n;
  }
  return sum / n;
}

double allacc(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  std::uint64_t trace = 0;
  for (int c = 0; c < cm.num_classes(); ++c) trace += cm.count(c, c);
  return static_cast<double>(trace) / static_cast<double>(cm.total());
}

namespace {
double psnr_from_mse(double mse, double peak) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}
}  // namespace

double psnr(const Image& a, const Image& b, double peak) {
  require_same_shape(a, b, "psnr");
  if (a.empty()) throw ShapeError("psnr: empty image");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    se += d * d;
  }
  return psnr_from_mse(se / static_cast<double>(a.size()), peak);
}

std::vector<double> psnr_per_sample(const Image& a, const Image& b, double peak) {
  require_same_shape(a, b, "psnr_per_sample");
  std::vector<double> out(static_cast<std::size_t>(a.n));
  for (int i = 0; i < a.n; ++i) {
    const float* pa = a.sample(i);
    const float* pb = b.sample(i);
    double se = 0.0;
    for (std::size_t j = 0; j < a.sample_size(); ++j) {
      const double d = static_cast<double>(pa[j]) - static_cast<double>(pb[j]);
      se += d * d;
    }
    out[static_cast<std::size_t>(i)] = psnr_from_mse(se / static_cast<double>(a.sample_size()), peak);
  }
  return out;
}

namespace {

struct SsimMoments {
  Tensor<double> ma, mb, saa, sbb, sab;
};

SsimMoments ssim_moments(const Tensor<double>& a, const Tensor<double>& b,
                         const std::vector<double>& taps) {
  Tensor<double> aa = Tensor<double>::like(a), bb = aa, ab = aa;
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa.data[i] = a.data[i] * a.data[i];
    bb.data[i] = b.data[i] * b.data[i];
    ab.data[i] = a.data[i] * b.data[i];
  }
  SsimMoments m;
  kernels::gaussian_filter_valid(a, taps, m.ma);
  kernels::gaussian_filter_valid(b, taps, m.mb);
  kernels::gaussian_filter_valid(aa, taps, m.saa);
  kernels::gaussian_filter_valid(bb, taps, m.sbb);
  kernels::gaussian_filter_valid(ab, taps, m.sab);
  return m;
}

// SSIM map plus, when requested, partial derivatives w.r.t. the filtered moments.
void ssim_map(const SsimMoments& m, const SsimParams& p, Tensor<double>& map,
              Tensor<double>* d_ma, Tensor<double>* d_saa, Tensor<double>* d_sab) {
  const double c1 = std::pow(p.k1 * p.dynamic_range, 2);
  const double c2 = std::pow(p.k2 * p.dynamic_range, 2);
  map = Tensor<double>::like(m.ma);
  if (d_ma) {
    *d_ma = Tensor<double>::like(m.ma);
    *d_saa = Tensor<double>::like(m.ma);
    *d_sab = Tensor<double>::like(m.ma);
  }
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double ma = m.ma.data[i], mb = m.mb.data[i];
    const double a1 = 2.0 * ma * mb + c1;
    const double a2 = 2.0 * (m.sab.data[i] - ma * mb) + c2;
    const double b1 = ma * ma + mb * mb + c1;
    const double b2 = (m.saa.data[i] - ma * ma) + (m.sbb.data[i] - mb * mb) + c2;
    const double s = (a1 * a2) / (b1 * b2);
    map.data[i] = s;
    if (d_ma) {
      d_ma->data[i] = (2.0 * mb * a2 - 2.0 * mb * a1) / (b1 * b2) -
                      s * (2.0 * ma / b1 - 2.0 * ma / b2);
      d_saa->data[i] = -s / b2;
      d_sab->data[i] = 2.0 * a1 / (b1 * b2);
    }
  }
}

template <typename T>
void check_ssim_args(const Tensor<T>& a, const Tensor<T>& b, const SsimParams& p) {
  require_same_shape(a, b, "ssim");
  if (a.h < p.window || a.w < p.window)
    throw ShapeError("ssim: image " + std::to_string(a.h) + "x" + std::to_string(a.w) +
                     " smaller than window " + std::to_string(p.window));
}

}  // namespace

template <typename T>
std::vector<double> ssim_per_sample(const Tensor<T>& a, const Tensor<T>& b, const SsimParams& p) {
  check_ssim_args(a, b, p);
  const auto taps = gaussian_taps(p.window, p.sigma);
  const auto m = ssim_moments(a.template cast<double>(), b.template cast<double>(), taps);
  Tensor<double> map;
  ssim_map(m, p, map, nullptr, nullptr, nullptr);
  std::vector<double> out(static_cast<std::size_t>(a.n), 0.0);
  for (int i = 0; i < map.n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < map.sample_size(); ++j) s += map.sample(i)[j];
    out[static_cast<std::size_t>(i)] = s / static_cast<double>(map.sample_size());
  }
  return out;
}

template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimParams& p) {
  const auto v = ssim_per_sample(a, b, p);
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

template <typename T>
double ssim_with_grad(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& grad_a,
                      const SsimParams& p) {
  check_ssim_args(a, b, p);
  const auto taps = gaussian_taps(p.window, p.sigma);
  const auto ad = a.template cast<double>();
  const auto bd = b.template cast<double>();
  const auto m = ssim_moments(ad, bd, taps);
  Tensor<double> map, d_ma, d_saa, d_sab;
  ssim_map(m, p, map, &d_ma, &d_saa, &d_sab);
  const double scale = 1.0 / static_cast<double>(map.size());
  double total = 0.0;
  for (double v : map.data) total += v;
  for (auto* t : {&d_ma, &d_saa, &d_sab})
    for (auto& v : t->data) v *= scale;
  Tensor<double> g_ma, g_saa, g_sab;
  kernels::gaussian_filter_valid_backward(d_ma, taps, g_ma);
  kernels::gaussian_filter_valid_backward(d_saa, taps, g_saa);
  kernels::gaussian_filter_valid_backward(d_sab, taps, g_sab);
  grad_a = Tensor<T>::like(a);
  for (std::size_t i = 0; i < a.size(); ++i)
    grad_a.data[i] = static_cast<T>(g_ma.data[i] + 2.0 * ad.data[i] * g_saa.data[i] +
                                    bd.data[i] * g_sab.data[i]);
  return total * scale;
}

template double ssim<float>(const Tensor<float>&, const Tensor<float>&, const SsimParams&);
template double ssim<double>(const Tensor<double>&, const Tensor<double>&, const SsimParams&);
template std::vector<double> ssim_per_sample<float>(const Tensor<float>&, const Tensor<float>&,
                                                    const SsimParams&);
template std::vector<double> ssim_per_sample<double>(const Tensor<double>&,
                                                     const Tensor<double>&, const SsimParams&);
template double ssim_with_grad<float>(const Tensor<float>&, const Tensor<float>&,
                                      Tensor<float>&, const SsimParams&);
template double ssim_with_grad<double>(const Tensor<double>&, const Tensor<double>&,
                                       Tensor<double>&, const SsimParams&);

}  // namespace rainshield
