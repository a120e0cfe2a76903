#include "rainshield/kernels.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace rainshield {

namespace {

void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k, float alpha,
          const float* a, int lda, const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// col rows are (ci, ky, kx); columns are output pixels.
template <typename T>
void im2col(const T* src, int h, int w, const ConvGeometry& g, T* col) {
  const int oh = g.out_h(h);
  const int ow = g.out_w(w);
  const std::size_t npix = static_cast<std::size_t>(oh) * ow;
  std::size_t row = 0;
  for (int ci = 0; ci < g.in_channels; ++ci) {
    const T* plane = src + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx, ++row) {
        T* dst = col + row * npix;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* drow = dst + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(drow, drow + ow, T(0));
            continue;
          }
          const T* srow = plane + static_cast<std::size_t>(iy) * w;
          if (g.stride == 1) {
            const int shift = kx - g.pad;
            const int lo = std::max(0, -shift);
            const int hi = std::min(ow, w - shift);
            std::fill(drow, drow + std::max(lo, 0), T(0));
            if (hi > lo) std::copy(srow + lo + shift, srow + hi + shift, drow + lo);
            std::fill(drow + std::max(hi, lo), drow + ow, T(0));
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              drow[ox] = (ix >= 0 && ix < w) ? srow[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int h, int w, const ConvGeometry& g, T* dst) {
  const int oh = g.out_h(h);
  const int ow = g.out_w(w);
  const std::size_t npix = static_cast<std::size_t>(oh) * ow;
  std::size_t row = 0;
  for (int ci = 0; ci < g.in_channels; ++ci) {
    T* plane = dst + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx, ++row) {
        const T* src = col + row * npix;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* drow = plane + static_cast<std::size_t>(iy) * w;
          const T* srow = src + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void check_conv_args(const Tensor<T>& in, std::span<const T> weight, const ConvGeometry& g) {
  if (in.c != g.in_channels)
    throw ShapeError("conv2d: input has " + std::to_string(in.c) + " channels, expected " +
                     std::to_string(g.in_channels));
  if (weight.size() != g.weight_count()) throw ShapeError("conv2d: weight size mismatch");
}

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

}  // namespace

std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> taps(static_cast<std::size_t>(size));
  const int half = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - half;
    taps[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * sigma * sigma));
    sum += taps[static_cast<std::size_t>(i)];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

namespace kernels {

template <typename T>
void conv2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                    const ConvGeometry& g, Tensor<T>& out) {
  check_conv_args(in, weight, g);
  const int oh = g.out_h(in.h);
  const int ow = g.out_w(in.w);
  if (!(out.n == in.n && out.c == g.out_channels && out.h == oh && out.w == ow))
    out = Tensor<T>(in.n, g.out_channels, oh, ow);
  const int npix = oh * ow;
  const int kdim = g.in_channels * g.kernel * g.kernel;

#pragma omp parallel for schedule(static)
  for (int i = 0; i < in.n; ++i) {
    thread_local std::vector<T> col;
    const T* cols = in.sample(i);
    if (!is_pointwise(g)) {
      col.resize(static_cast<std::size_t>(kdim) * npix);
      im2col(in.sample(i), in.h, in.w, g, col.data());
      cols = col.data();
    }
    T* dst = out.sample(i);
    gemm(CblasNoTrans, CblasNoTrans, g.out_channels, npix, kdim, T(1), weight.data(), kdim, cols,
         npix, T(0), dst, npix);
    for (int co = 0; co < g.out_channels; ++co) {
      const T b = bias[static_cast<std::size_t>(co)];
      T* p = dst + static_cast<std::size_t>(co) * npix;
      for (int j = 0; j < npix; ++j) p[j] += b;
    }
  }
}

template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, const ConvGeometry& g,
                     const Tensor<T>& dout, Tensor<T>* din, std::span<T> dweight,
                     std::span<T> dbias) {
  check_conv_args(in, weight, g);
  const int oh = g.out_h(in.h);
  const int ow = g.out_w(in.w);
  if (dout.n != in.n || dout.c != g.out_channels || dout.h != oh || dout.w != ow)
    throw ShapeError("conv2d_backward: dout shape " + dout.shape_string());
  const int npix = oh * ow;
  const int kdim = g.in_channels * g.kernel * g.kernel;
  const bool want_params = !dweight.empty();
  if (want_params && (dweight.size() != g.weight_count() ||
                      dbias.size() != static_cast<std::size_t>(g.out_channels)))
    throw ShapeError("conv2d_backward: gradient buffer size mismatch");
  if (din) {
    if (!din->same_shape(in)) *din = Tensor<T>::like(in);
    std::fill(din->data.begin(), din->data.end(), T(0));
  }

  const std::size_t pstride = g.weight_count() + static_cast<std::size_t>(g.out_channels);
  std::vector<T> partial;
  if (want_params) partial.assign(pstride * static_cast<std::size_t>(in.n), T(0));

#pragma omp parallel for schedule(static)
  for (int i = 0; i < in.n; ++i) {
    thread_local std::vector<T> col;
    const T* d = dout.sample(i);
    if (want_params) {
      const T* cols = in.sample(i);
      if (!is_pointwise(g)) {
        col.resize(static_cast<std::size_t>(kdim) * npix);
        im2col(in.sample(i), in.h, in.w, g, col.data());
        cols = col.data();
      }
      T* pw = partial.data() + pstride * static_cast<std::size_t>(i);
      gemm(CblasNoTrans, CblasTrans, g.out_channels, kdim, npix, T(1), d, npix, cols, npix, T(0),
           pw, kdim);
      T* pb = pw + g.weight_count();
      for (int co = 0; co < g.out_channels; ++co) {
        const T* p = d + static_cast<std::size_t>(co) * npix;
        T s = 0;
        for (int j = 0; j < npix; ++j) s += p[j];
        pb[co] = s;
      }
    }
    if (din) {
      if (is_pointwise(g)) {
        gemm(CblasTrans, CblasNoTrans, kdim, npix, g.out_channels, T(1), weight.data(), kdim, d,
             npix, T(0), din->sample(i), npix);
      } else {
        col.resize(static_cast<std::size_t>(kdim) * npix);
        gemm(CblasTrans, CblasNoTrans, kdim, npix, g.out_channels, T(1), weight.data(), kdim, d,
             npix, T(0), col.data(), npix);
        col2im_add(col.data(), in.h, in.w, g, din->sample(i));
      }
    }
  }

  if (want_params) {
    for (int i = 0; i < in.n; ++i) {
      const T* pw = partial.data() + pstride * static_cast<std::size_t>(i);
      for (std::size_t j = 0; j < g.weight_count(); ++j) dweight[j] += pw[j];
      for (int co = 0; co < g.out_channels; ++co)
        dbias[static_cast<std::size_t>(co)] += pw[g.weight_count() + static_cast<std::size_t>(co)];
    }
  }
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
  T* p = x.data.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) p[i] = p[i] > T(0) ? p[i] : T(0);
}

template <typename T>
void relu_backward(const Tensor<T>& activated, Tensor<T>& grad) {
  require_same_shape(activated, grad, "relu_backward");
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(grad.size());
  const T* a = activated.data.data();
  T* g = grad.data.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    if (!(a[i] > T(0))) g[i] = T(0);
}

template <typename T>
void upsample2x_forward(const Tensor<T>& in, Tensor<T>& out) {
  if (!(out.n == in.n && out.c == in.c && out.h == 2 * in.h && out.w == 2 * in.w))
    out = Tensor<T>(in.n, in.c, 2 * in.h, 2 * in.w);
  const int planes = in.n * in.c;
  const int ow = out.w;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const T* src = in.data.data() + static_cast<std::size_t>(p) * in.plane();
    T* dst = out.data.data() + static_cast<std::size_t>(p) * out.plane();
    for (int y = 0; y < in.h; ++y) {
      T* r0 = dst + static_cast<std::size_t>(2 * y) * ow;
      const T* s = src + static_cast<std::size_t>(y) * in.w;
      for (int x = 0; x < in.w; ++x) r0[2 * x] = r0[2 * x + 1] = s[x];
      std::copy(r0, r0 + ow, r0 + ow);
    }
  }
}

template <typename T>
void upsample2x_backward(const Tensor<T>& dout, Tensor<T>& din) {
  if (dout.h % 2 || dout.w % 2) throw ShapeError("upsample2x_backward: odd extent");
  if (!(din.n == dout.n && din.c == dout.c && din.h == dout.h / 2 && din.w == dout.w / 2))
    din = Tensor<T>(dout.n, dout.c, dout.h / 2, dout.w / 2);
  const int planes = dout.n * dout.c;
  const int ow = dout.w;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const T* src = dout.data.data() + static_cast<std::size_t>(p) * dout.plane();
    T* dst = din.data.data() + static_cast<std::size_t>(p) * din.plane();
    for (int y = 0; y < din.h; ++y) {
      const T* r0 = src + static_cast<std::size_t>(2 * y) * ow;
      const T* r1 = r0 + ow;
      T* d = dst + static_cast<std::size_t>(y) * din.w;
      for (int x = 0; x < din.w; ++x)
        d[x] = (r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]);
    }
  }
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add_inplace");
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(a.size());
  T* pa = a.data.data();
  const T* pb = b.data.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) pa[i] += pb[i];
}

template <typename T>
void gaussian_filter_valid(const Tensor<T>& in, std::span<const double> taps, Tensor<T>& out) {
  const int k = static_cast<int>(taps.size());
  if (in.h < k || in.w < k) throw ShapeError("gaussian_filter_valid: image smaller than window");
  const int oh = in.h - k + 1;
  const int ow = in.w - k + 1;
  if (!(out.n == in.n && out.c == in.c && out.h == oh && out.w == ow))
    out = Tensor<T>(in.n, in.c, oh, ow);
  const int planes = in.n * in.c;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const T* src = in.data.data() + static_cast<std::size_t>(p) * in.plane();
    T* dst = out.data.data() + static_cast<std::size_t>(p) * out.plane();
    std::vector<double> tmp(static_cast<std::size_t>(in.h) * ow);
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0.0;
        const T* r = src + static_cast<std::size_t>(y) * in.w + x;
        for (int j = 0; j < k; ++j) s += taps[static_cast<std::size_t>(j)] * r[j];
        tmp[static_cast<std::size_t>(y) * ow + x] = s;
      }
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int i = 0; i < k; ++i)
          s += taps[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>(y + i) * ow + x];
        dst[static_cast<std::size_t>(y) * ow + x] = static_cast<T>(s);
      }
  }
}

template <typename T>
void gaussian_filter_valid_backward(const Tensor<T>& dout, std::span<const double> taps,
                                    Tensor<T>& din) {
  const int k = static_cast<int>(taps.size());
  const int h = dout.h + k - 1;
  const int w = dout.w + k - 1;
  if (!(din.n == dout.n && din.c == dout.c && din.h == h && din.w == w))
    din = Tensor<T>(dout.n, dout.c, h, w);
  const int planes = dout.n * dout.c;
  const int ow = dout.w;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const T* src = dout.data.data() + static_cast<std::size_t>(p) * dout.plane();
    T* dst = din.data.data() + static_cast<std::size_t>(p) * din.plane();
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow, 0.0);
    for (int y = 0; y < dout.h; ++y)
      for (int x = 0; x < ow; ++x) {
        const double g = src[static_cast<std::size_t>(y) * ow + x];
        for (int i = 0; i < k; ++i)
          tmp[static_cast<std::size_t>(y + i) * ow + x] += taps[static_cast<std::size_t>(i)] * g;
      }
    std::vector<double> acc(static_cast<std::size_t>(h) * w, 0.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < ow; ++x) {
        const double g = tmp[static_cast<std::size_t>(y) * ow + x];
        double* r = acc.data() + static_cast<std::size_t>(y) * w + x;
        for (int j = 0; j < k; ++j) r[j] += taps[static_cast<std::size_t>(j)] * g;
      }
    for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<T>(acc[i]);
  }
}

#define RAINSHIELD_INSTANTIATE(T)                                                               \
  template void conv2d_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>,    \
                                  const ConvGeometry&, Tensor<T>&);                            \
  template void conv2d_backward<T>(const Tensor<T>&, std::span<const T>, const ConvGeometry&,  \
                                   const Tensor<T>&, Tensor<T>*, std::span<T>, std::span<T>);  \
  template void relu_inplace<T>(Tensor<T>&);                                                   \
  template void relu_backward<T>(const Tensor<T>&, Tensor<T>&);                                \
  template void upsample2x_forward<T>(const Tensor<T>&, Tensor<T>&);                           \
  template void upsample2x_backward<T>(const Tensor<T>&, Tensor<T>&);                          \
  template void add_inplace<T>(Tensor<T>&, const Tensor<T>&);                                  \
  template void gaussian_filter_valid<T>(const Tensor<T>&, std::span<const double>, Tensor<T>&); \
  template void gaussian_filter_valid_backward<T>(const Tensor<T>&, std::span<const double>,   \
                                                  Tensor<T>&);

RAINSHIELD_INSTANTIATE(float)
RAINSHIELD_INSTANTIATE(double)
#undef RAINSHIELD_INSTANTIATE

}  // namespace kernels

namespace reference {

template <typename T>
void conv2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                    const ConvGeometry& g, Tensor<T>& out) {
  check_conv_args(in, weight, g);
  const int oh = g.out_h(in.h);
  const int ow = g.out_w(in.w);
  out = Tensor<T>(in.n, g.out_channels, oh, ow);
  const int k = g.kernel;
  for (int i = 0; i < in.n; ++i)
    for (int co = 0; co < g.out_channels; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double s = bias[static_cast<std::size_t>(co)];
          for (int ci = 0; ci < g.in_channels; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                s += static_cast<double>(
                         weight[((static_cast<std::size_t>(co) * g.in_channels + ci) * k + ky) * k +
                                kx]) *
                     in.at(i, ci, iy, ix);
              }
          out.at(i, co, oy, ox) = static_cast<T>(s);
        }
}

template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, const ConvGeometry& g,
                     const Tensor<T>& dout, Tensor<T>* din, std::span<T> dweight,
                     std::span<T> dbias) {
  check_conv_args(in, weight, g);
  const int k = g.kernel;
  if (din) *din = Tensor<T>::like(in);
  for (int i = 0; i < in.n; ++i)
    for (int co = 0; co < g.out_channels; ++co)
      for (int oy = 0; oy < dout.h; ++oy)
        for (int ox = 0; ox < dout.w; ++ox) {
          const T d = dout.at(i, co, oy, ox);
          if (!dbias.empty()) dbias[static_cast<std::size_t>(co)] += d;
          for (int ci = 0; ci < g.in_channels; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                const std::size_t wi =
                    ((static_cast<std::size_t>(co) * g.in_channels + ci) * k + ky) * k + kx;
                if (!dweight.empty()) dweight[wi] += d * in.at(i, ci, iy, ix);
                if (din) din->at(i, ci, iy, ix) += d * weight[wi];
              }
        }
}

template <typename T>
void upsample2x_forward(const Tensor<T>& in, Tensor<T>& out) {
  out = Tensor<T>(in.n, in.c, 2 * in.h, 2 * in.w);
  for (int i = 0; i < in.n; ++i)
    for (int c = 0; c < in.c; ++c)
      for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) out.at(i, c, y, x) = in.at(i, c, y / 2, x / 2);
}

template <typename T>
void upsample2x_backward(const Tensor<T>& dout, Tensor<T>& din) {
  din = Tensor<T>(dout.n, dout.c, dout.h / 2, dout.w / 2);
  for (int i = 0; i < dout.n; ++i)
    for (int c = 0; c < dout.c; ++c)
      for (int y = 0; y < dout.h; ++y)
        for (int x = 0; x < dout.w; ++x) din.at(i, c, y / 2, x / 2) += dout.at(i, c, y, x);
}

template <typename T>
void gaussian_filter_valid(const Tensor<T>& in, std::span<const double> taps, Tensor<T>& out) {
  const int k = static_cast<int>(taps.size());
  if (in.h < k || in.w < k) throw ShapeError("gaussian_filter_valid: image smaller than window");
  out = Tensor<T>(in.n, in.c, in.h - k + 1, in.w - k + 1);
  for (int i = 0; i < in.n; ++i)
    for (int c = 0; c < in.c; ++c)
      for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
          double s = 0.0;
          for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b)
              s += taps[static_cast<std::size_t>(a)] * taps[static_cast<std::size_t>(b)] *
                   in.at(i, c, y + a, x + b);
          out.at(i, c, y, x) = static_cast<T>(s);
        }
}

#define RAINSHIELD_INSTANTIATE(T)                                                               \
  template void conv2d_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>,    \
                                  const ConvGeometry&, Tensor<T>&);                            \
  template void conv2d_backward<T>(const Tensor<T>&, std::span<const T>, const ConvGeometry&,  \
                                   const Tensor<T>&, Tensor<T>*, std::span<T>, std::span<T>);  \
  template void upsample2x_forward<T>(const Tensor<T>&, Tensor<T>&);                           \
  template void upsample2x_backward<T>(const Tensor<T>&, Tensor<T>&);                          \
  template void gaussian_filter_valid<T>(const Tensor<T>&, std::span<const double>, Tensor<T>&);

RAINSHIELD_INSTANTIATE(float)
RAINSHIELD_INSTANTIATE(double)
#undef RAINSHIELD_INSTANTIATE

}  // namespace reference

}  // namespace rainshield
