#pragma once

#include <span>

#include "rainshield/tensor.hpp"

// Dense kernels used by the reference networks and metrics. The functions in
// `kernels` parallelize across batch samples with OpenMP and run convolutions
// through im2col + BLAS GEMM. The functions in `reference` compute the same
// quantities with plain serial loops; tests check one against the other.
//
// Results of the parallel kernels do not depend on the OpenMP thread count:
// every sample is processed independently and cross-sample reductions (weight
// gradients) are summed in sample order.

namespace rainshield {

struct ConvGeometry {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_h(int h) const { return (h + 2 * pad - kernel) / stride + 1; }
  int out_w(int w) const { return (w + 2 * pad - kernel) / stride + 1; }
  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
  std::size_t param_count() const { return weight_count() + out_channels; }
};

namespace kernels {

/// out = conv(in, weight) + bias; out is resized.
/// weight layout: [out][in][ky][kx].
template <typename T>
void conv2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                    const ConvGeometry& g, Tensor<T>& out);

/// Accumulates parameter gradients into dweight/dbias (skipped when empty)
/// and overwrites *din when non-null.
template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, const ConvGeometry& g,
                     const Tensor<T>& dout, Tensor<T>* din, std::span<T> dweight,
                     std::span<T> dbias);

template <typename T>
void relu_inplace(Tensor<T>& x);

/// grad *= (activated > 0)
template <typename T>
void relu_backward(const Tensor<T>& activated, Tensor<T>& grad);

template <typename T>
void upsample2x_forward(const Tensor<T>& in, Tensor<T>& out);

template <typename T>
void upsample2x_backward(const Tensor<T>& dout, Tensor<T>& din);

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b);

/// Separable Gaussian filter, 'valid' extent: output is (h-k+1) x (w-k+1)
/// per channel. `taps` is the normalized 1-D window of odd length k.
template <typename T>
void gaussian_filter_valid(const Tensor<T>& in, std::span<const double> taps, Tensor<T>& out);

/// Transpose of gaussian_filter_valid: scatters dout back onto the input grid.
template <typename T>
void gaussian_filter_valid_backward(const Tensor<T>& dout, std::span<const double> taps,
                                    Tensor<T>& din);

}  // namespace kernels

namespace reference {

template <typename T>
void conv2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                    const ConvGeometry& g, Tensor<T>& out);

template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, const ConvGeometry& g,
                     const Tensor<T>& dout, Tensor<T>* din, std::span<T> dweight,
                     std::span<T> dbias);

template <typename T>
void upsample2x_forward(const Tensor<T>& in, Tensor<T>& out);

template <typename T>
void upsample2x_backward(const Tensor<T>& dout, Tensor<T>& din);

/// Direct 2-D window sum, no separability.
template <typename T>
void gaussian_filter_valid(const Tensor<T>& in, std::span<const double> taps, Tensor<T>& out);

}  // namespace reference

/// Normalized 1-D Gaussian window of the given odd size.
std::vector<double> gaussian_taps(int size, double sigma);

}  // namespace rainshield
