#pragma once

#include <vector>

#include "rainshield/losses.hpp"
#include "rainshield/models.hpp"

namespace rainshield {

/// Which leaf the gradient is taken with respect to.
enum class Leaf { input, params };

template <typename T>
struct Gradient {
  double loss = 0.0;
  Tensor<T> d_input;      // filled for Leaf::input
  std::vector<T> d_params;  // filled for Leaf::params
};

/// Value and analytic gradient of head(model(x)).
template <typename T>
Gradient<T> gradient(const SegNet<T>& model, const Tensor<T>& x, const LossHead<T>& head, Leaf leaf);
template <typename T>
Gradient<T> gradient(const DerainNet<T>& model, const Tensor<T>& x, const LossHead<T>& head,
                     Leaf leaf);
/// Derain followed by segmentation, gradient w.r.t. the input or the derain parameters.
template <typename T>
Gradient<T> gradient(const DerainNet<T>& derain, const SegNet<T>& seg, const Tensor<T>& x,
                     const LossHead<T>& head, Leaf leaf);
/// Identity model: the gradient of head(x) w.r.t. x.
template <typename T>
Gradient<T> gradient(const Tensor<T>& x, const LossHead<T>& head);

}  // namespace rainshield
