#include <cmath>
#include <limits>

#include "doctest.h"
#include "rainshield/losses.hpp"
#include "rainshield/metrics.hpp"
#include "test_util.hpp"

using namespace rainshield;
using rainshield::testing::random_labels;
using rainshield::testing::random_tensor;

namespace {

Tensor<double> pixel_logits(std::initializer_list<double> z) {
  Tensor<double> t(1, static_cast<int>(z.size()), 1, 1);
  std::size_t i = 0;
  for (double v : z) t.data[i++] = v;
  return t;
}

std::vector<LabelMap> one_label(int y) { return {LabelMap(1, 1, static_cast<std::uint8_t>(y))}; }

template <typename F>
void fd_check(const Tensor<double>& x, const Tensor<double>& grad, F&& f, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const double h = 1e-4;
  for (int d = 0; d < 20; ++d) {
    auto p = x, m = x;
    double an = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = n(rng);
      p.data[i] += h * v;
      m.data[i] -= h * v;
      an += grad.data[i] * v;
    }
    const double fd = (f(p) - f(m)) / (2 * h);
    CHECK(std::abs(fd - an) <= 1e-3 * std::max(std::abs(fd), std::abs(an)) + 1e-12);
  }
}

}  // namespace

TEST_CASE("cross-entropy closed forms") {
  Tensor<double> uniform(1, 5, 4, 4, 0.3);
  std::vector<LabelMap> y{random_labels(4, 4, 5, 1)};
  CHECK(cross_entropy(uniform, y)[0] == doctest::Approx(std::log(5.0)).epsilon(1e-14));

  auto sat = pixel_logits({200.0, 0.0, 0.0});
  CHECK(cross_entropy(sat, one_label(0))[0] < 1e-60);
}

TEST_CASE("cross-entropy ignores masked pixels") {
  auto logits = random_tensor<double>(2, 5, 8, 8, 3);
  std::vector<LabelMap> y{random_labels(8, 8, 5, 4, 0.3), random_labels(8, 8, 5, 5, 0.3)};
  const auto base = cross_entropy(logits, y);
  auto scrambled = logits;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int i = 0; i < 2; ++i)
    for (int c = 0; c < 5; ++c)
      for (int p = 0; p < 64; ++p)
        if (y[i].ids[p] == LabelMap::kIgnore) scrambled.sample(i)[c * 64 + p] = u(rng);
  CHECK(cross_entropy(scrambled, y) == base);

  LabelMap all(8, 8, LabelMap::kIgnore);
  std::vector<LabelMap> y2{y[0], all};
  CHECK_THROWS_AS(cross_entropy(logits, y2), std::domain_error);
  CHECK_THROWS_AS(cross_entropy(logits, std::vector<LabelMap>{y[0]}), ShapeError);
}

TEST_CASE("cross-entropy gradient matches finite differences") {
  const auto logits = random_tensor<double>(2, 5, 4, 4, 11, -3, 3);
  std::vector<LabelMap> y{random_labels(4, 4, 5, 12, 0.2), random_labels(4, 4, 5, 13, 0.2)};
  Tensor<double> g;
  cross_entropy(logits, y, &g);
  fd_check(logits, g, [&](const Tensor<double>& z) {
    const auto v = cross_entropy(z, y);
    return v[0] + v[1];
  }, 14);
}

TEST_CASE("cw margin loss closed forms") {
  // margin z_y - max other = 2.0 - 1.0
  CHECK(cw_margin_loss(pixel_logits({2.0, 0.5, 1.0}), one_label(0), 0.0)[0] == doctest::Approx(-1.0));
  CHECK(cw_margin_loss(pixel_logits({1.0, 1.0, 0.0}), one_label(0), 0.0)[0] == 0.0);
  // misclassified by 2, clamped at -kappa
  CHECK(cw_margin_loss(pixel_logits({0.0, 2.0, 1.0}), one_label(0), 0.5)[0] == doctest::Approx(0.5));
  CHECK(cw_margin_loss(pixel_logits({0.0, 2.0, 1.0}), one_label(0), 5.0)[0] == doctest::Approx(2.0));
  CHECK_THROWS_AS(cw_margin_loss(pixel_logits({0.0, 1.0}), one_label(0),
                                 std::numeric_limits<double>::infinity()),
                  std::invalid_argument);
  CHECK_THROWS_AS(cw_margin_loss(pixel_logits({0.0, 1.0}), one_label(0), -1.0), std::invalid_argument);
}

TEST_CASE("cw margin gradient matches finite differences") {
  const auto logits = random_tensor<double>(1, 4, 4, 4, 21, -3, 3);
  std::vector<LabelMap> y{random_labels(4, 4, 4, 22)};
  Tensor<double> g;
  cw_margin_loss(logits, y, 0.3, &g);
  fd_check(logits, g, [&](const Tensor<double>& z) { return cw_margin_loss(z, y, 0.3)[0]; }, 23);
}

TEST_CASE("defense loss identities") {
  const auto a = random_tensor<double>(2, 3, 16, 16, 31, 0, 1);
  const auto b = random_tensor<double>(2, 3, 16, 16, 32, 0, 1);
  for (auto kind : {DefenseLossKind::mse, DefenseLossKind::l1, DefenseLossKind::l1_plus_ssim}) {
    const DefenseLoss loss{kind};
    CHECK(std::abs(loss(a, a)) <= 1e-6);
    CHECK(loss(a, b) > 0.0);
  }
  for (auto kind : {DefenseLossKind::mse, DefenseLossKind::l1}) {
    const DefenseLoss loss{kind};
    CHECK(loss(a, a) == 0.0);
    CHECK(loss(a, b) == loss(b, a));
  }
  Tensor<double> c(1, 3, 4, 4, 0.2), d(1, 3, 4, 4, 0.5);
  CHECK(DefenseLoss{DefenseLossKind::mse}(c, d) == doctest::Approx(0.09));
  CHECK(DefenseLoss{DefenseLossKind::l1}(c, d) == doctest::Approx(0.3));
  CHECK(parse_defense_loss("l1_plus_ssim") == DefenseLossKind::l1_plus_ssim);
  CHECK_THROWS_AS(parse_defense_loss("huber"), std::invalid_argument);
}

TEST_CASE("defense loss gradients match finite differences") {
  const auto a = random_tensor<double>(1, 3, 14, 14, 41, 0, 1);
  const auto b = random_tensor<double>(1, 3, 14, 14, 42, 0, 1);
  for (auto kind : {DefenseLossKind::mse, DefenseLossKind::l1_plus_ssim}) {
    const DefenseLoss loss{kind, 1.0, 0.5};
    Tensor<double> g;
    loss(a, b, &g);
    fd_check(a, g, [&](const Tensor<double>& p) { return loss(p, b); }, 43);
  }
}

TEST_CASE("argmax labels") {
  auto t = pixel_logits({0.1, 3.0, -1.0});
  CHECK(argmax_labels(t)[0].ids[0] == 1);
}
