#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rainshield {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense NCHW tensor. A single image is a tensor with n == 1.
template <typename T>
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {
    if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0) throw ShapeError("negative tensor extent");
  }

  static Tensor like(const Tensor& other, T fill = T(0)) {
    return Tensor(other.n, other.c, other.h, other.w, fill);
  }

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  bool empty() const { return data.empty(); }

  T* sample(int i) { return data.data() + i * sample_size(); }
  const T* sample(int i) const { return data.data() + i * sample_size(); }
  std::span<T> sample_span(int i) { return {sample(i), sample_size()}; }
  std::span<const T> sample_span(int i) const { return {sample(i), sample_size()}; }

  T& at(int i, int ch, int y, int x) {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
  const T& at(int i, int ch, int y, int x) const {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }

  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

  std::string shape_string() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + "]";
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(n, c, h, w);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  /// Copy of samples [first, first + count).
  Tensor slice(int first, int count) const {
    Tensor out(count, c, h, w);
    std::copy(sample(first), sample(first) + count * sample_size(), out.data.begin());
    return out;
  }

  bool operator==(const Tensor&) const = default;
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

/// Stack single-sample tensors along n.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>* const> items) {
  if (items.empty()) return {};
  const auto& f = *items.front();
  Tensor<T> out(static_cast<int>(items.size()), f.c, f.h, f.w);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i]->n != 1 || items[i]->c != f.c || items[i]->h != f.h || items[i]->w != f.w)
      throw ShapeError("stack: inconsistent sample shapes");
    std::copy(items[i]->data.begin(), items[i]->data.end(), out.sample(static_cast<int>(i)));
  }
  return out;
}

/// Per-pixel class ids, row-major, with a reserved ignore id.
struct LabelMap {
  static constexpr std::uint8_t kIgnore = 255;

  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> ids;

  LabelMap() = default;
  LabelMap(int h_, int w_, std::uint8_t fill = 0)
      : h(h_), w(w_), ids(static_cast<std::size_t>(h_) * w_, fill) {}

  std::uint8_t& at(int y, int x) { return ids[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t at(int y, int x) const { return ids[static_cast<std::size_t>(y) * w + x]; }
  std::size_t size() const { return ids.size(); }

  bool operator==(const LabelMap&) const = default;
};

using Image = Tensor<float>;

}  // namespace rainshield
