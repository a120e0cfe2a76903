#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "rainshield/tensor.hpp"

namespace rainshield::testing {

template <typename T>
Tensor<T> random_tensor(int n, int c, int h, int w, std::uint64_t seed, double lo = -1.0,
                        double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(n, c, h, w);
  for (auto& v : t.data) v = static_cast<T>(u(rng));
  return t;
}

inline LabelMap random_labels(int h, int w, int classes, std::uint64_t seed, double ignore_frac = 0.0) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, classes - 1);
  std::uniform_real_distribution<double> p(0.0, 1.0);
  LabelMap m(h, w);
  for (auto& v : m.ids) v = p(rng) < ignore_frac ? LabelMap::kIgnore : static_cast<std::uint8_t>(u(rng));
  return m;
}

template <typename T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template <typename T>
double max_abs(const std::vector<T>& a) {
  double m = 0.0;
  for (auto v : a) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("rainshield_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace rainshield::testing
