#include "rainshield/gradient.hpp"

#include <stdexcept>

namespace rainshield {

namespace {

template <typename T>
double apply_head(const LossHead<T>& head, const Tensor<T>& out, Tensor<T>& d) {
  d = Tensor<T>();
  const double v = head(out, d);
  if (!d.same_shape(out))
    throw ShapeError("loss head must write a gradient shaped like the output " +
                     out.shape_string() + ", got " + d.shape_string());
  return v;
}

}  // namespace

template <typename T>
Gradient<T> gradient(const SegNet<T>& model, const Tensor<T>& x, const LossHead<T>& head, Leaf leaf) {
  typename SegNet<T>::Cache cache;
  const auto out = model.forward(x, cache);
  Tensor<T> d;
  Gradient<T> g;
  g.loss = apply_head(head, out, d);
  if (leaf == Leaf::input) {
    model.backward(cache, d, &g.d_input, {});
  } else {
    g.d_params.assign(model.param_count(), T(0));
    model.backward(cache, d, nullptr, g.d_params);
  }
  return g;
}

template <typename T>
Gradient<T> gradient(const DerainNet<T>& model, const Tensor<T>& x, const LossHead<T>& head,
                     Leaf leaf) {
  typename DerainNet<T>::Cache cache;
  const auto out = model.forward(x, cache);
  Tensor<T> d;
  Gradient<T> g;
  g.loss = apply_head(head, out, d);
  if (leaf == Leaf::input) {
    model.backward(cache, d, &g.d_input, {});
  } else {
    g.d_params.assign(model.param_count(), T(0));
    model.backward(cache, d, nullptr, g.d_params);
  }
  return g;
}

template <typename T>
Gradient<T> gradient(const DerainNet<T>& derain, const SegNet<T>& seg, const Tensor<T>& x,
                     const LossHead<T>& head, Leaf leaf) {
  typename DerainNet<T>::Cache dc;
  typename SegNet<T>::Cache sc;
  const auto restored = derain.forward(x, dc);
  const auto out = seg.forward(restored, sc);
  Tensor<T> d, d_restored;
  Gradient<T> g;
  g.loss = apply_head(head, out, d);
  seg.backward(sc, d, &d_restored, {});
  if (leaf == Leaf::input) {
    derain.backward(dc, d_restored, &g.d_input, {});
  } else {
    g.d_params.assign(derain.param_count(), T(0));
    derain.backward(dc, d_restored, nullptr, g.d_params);
  }
  return g;
}

template <typename T>
Gradient<T> gradient(const Tensor<T>& x, const LossHead<T>& head) {
  Gradient<T> g;
  g.loss = apply_head(head, x, g.d_input);
  return g;
}

#define RAINSHIELD_INSTANTIATE(T)                                                               \
  template Gradient<T> gradient<T>(const SegNet<T>&, const Tensor<T>&, const LossHead<T>&, Leaf); \
  template Gradient<T> gradient<T>(const DerainNet<T>&, const Tensor<T>&, const LossHead<T>&,     \
                                   Leaf);                                                       \
  template Gradient<T> gradient<T>(const DerainNet<T>&, const SegNet<T>&, const Tensor<T>&,       \
                                   const LossHead<T>&, Leaf);                                   \
  template Gradient<T> gradient<T>(const Tensor<T>&, const LossHead<T>&);

RAINSHIELD_INSTANTIATE(float)
RAINSHIELD_INSTANTIATE(double)
#undef RAINSHIELD_INSTANTIATE

}  // namespace rainshield
