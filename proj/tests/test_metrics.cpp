#include <cmath>

#include "doctest.h"
#include "rainshield/metrics.hpp"
#include "test_util.hpp"

using namespace rainshield;
using rainshield::testing::random_labels;
using rainshield::testing::random_tensor;

namespace {

LabelMap make_map(int h, int w, std::initializer_list<int> ids) {
  LabelMap m(h, w);
  std::size_t i = 0;
  for (int v : ids) m.ids[i++] = static_cast<std::uint8_t>(v);
  return m;
}

struct BruteForce {
  double miou, macc, allacc;
};

// Counts pixels directly from the label maps, no confusion matrix.
BruteForce brute_force(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts, int k) {
  std::vector<std::uint64_t> tp(k), in_gt(k), in_pred(k), uni(k);
  std::uint64_t correct = 0, total = 0;
  for (std::size_t s = 0; s < gts.size(); ++s) {
    for (std::size_t p = 0; p < gts[s].ids.size(); ++p) {
      const int g = gts[s].ids[p];
      const int q = preds[s].ids[p];
      if (g == LabelMap::kIgnore) continue;
      ++total;
      if (g == q) ++correct;
      for (int c = 0; c < k; ++c) {
        if (g == c && q == c) ++tp[c];
        if (g == c) ++in_gt[c];
        if (q == c) ++in_pred[c];
        if (g == c || q == c) ++uni[c];
      }
    }
  }
  double si = 0, sa = 0;
  int ni = 0, na = 0;
  for (int c = 0; c < k; ++c) {
    if (uni[c] > 0) {
      si += static_cast<double>(tp[c]) / static_cast<double>(uni[c]);
      ++ni;
    }
    if (in_gt[c] > 0) {
      sa += static_cast<double>(tp[c]) / static_cast<double>(in_gt[c]);
      ++na;
    }
  }
  return {si / ni, sa / na, static_cast<double>(correct) / static_cast<double>(total)};
}

}  // namespace

TEST_CASE("hand-enumerated 2x2 confusion matrix") {
  ConfusionMatrix cm(2);
  cm.accumulate(make_map(2, 2, {0, 1, 1, 1}), make_map(2, 2, {0, 0, 1, 1}));
  CHECK(cm.count(0, 0) == 1);
  CHECK(cm.count(0, 1) == 1);
  CHECK(cm.count(1, 1) == 2);
  CHECK(cm.count(1, 0) == 0);
  const auto pc = per_class(cm);
  CHECK(pc[0].iou == doctest::Approx(0.5));
  CHECK(pc[1].iou == doctest::Approx(2.0 / 3.0));
  CHECK(miou(cm) == doctest::Approx(7.0 / 12.0).epsilon(1e-15));
  CHECK(allacc(cm) == 0.75);
}

TEST_CASE("perfect prediction gives unit metrics and a diagonal matrix") {
  const auto gt = random_labels(8, 8, 4, 3);
  ConfusionMatrix cm(4);
  cm.accumulate(gt, gt);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if (i != j) CHECK(cm.count(i, j) == 0);
  CHECK(miou(cm) == 1.0);
  CHECK(macc(cm) == 1.0);
  CHECK(allacc(cm) == 1.0);
}

TEST_CASE("ignored pixels and errors") {
  ConfusionMatrix cm(3);
  LabelMap ign(4, 4, LabelMap::kIgnore);
  cm.accumulate(random_labels(4, 4, 3, 1), ign);
  CHECK(cm.total() == 0);
  CHECK_THROWS_AS(miou(cm), std::domain_error);
  CHECK_THROWS_AS(macc(cm), std::domain_error);
  CHECK_THROWS_AS(allacc(cm), std::domain_error);
  CHECK_THROWS_AS(cm.accumulate(make_map(1, 1, {3}), make_map(1, 1, {0})), std::out_of_range);
  CHECK_THROWS_AS(cm.accumulate(make_map(1, 1, {0}), make_map(1, 1, {5})), std::out_of_range);
}

TEST_CASE("class absent from gt and pred is excluded from the mean") {
  ConfusionMatrix cm(4);
  cm.accumulate(make_map(2, 2, {0, 1, 1, 1}), make_map(2, 2, {0, 0, 1, 1}));
  CHECK(miou(cm) == doctest::Approx(7.0 / 12.0).epsilon(1e-15));
  const auto pc = per_class(cm);
  CHECK(pc.size() == 4);
  CHECK_FALSE(pc[3].in_gt);
  CHECK_FALSE(pc[3].in_pred);
}

TEST_CASE("segmentation metrics equal a pixel-counting oracle on 100 random 8x8 maps") {
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + trial % 5;
    std::vector<LabelMap> preds, gts;
    ConfusionMatrix cm(k);
    const int maps = 1 + trial % 3;
    for (int s = 0; s < maps; ++s) {
      gts.push_back(random_labels(8, 8, k, 1000 + trial * 7 + s, trial % 4 == 0 ? 0.2 : 0.0));
      preds.push_back(random_labels(8, 8, k, 5000 + trial * 7 + s));
      cm.accumulate(preds.back(), gts.back());
    }
    const auto bf = brute_force(preds, gts, k);
    CAPTURE(trial);
    CHECK(miou(cm) == bf.miou);
    CHECK(macc(cm) == bf.macc);
    CHECK(allacc(cm) == bf.allacc);
    CHECK(miou(cm) >= 0.0);
    CHECK(miou(cm) <= 1.0);
  }
}

TEST_CASE("accumulation order does not matter and merge is associative") {
  std::vector<LabelMap> p, g;
  for (int i = 0; i < 6; ++i) {
    p.push_back(random_labels(8, 8, 5, 40 + i));
    g.push_back(random_labels(8, 8, 5, 80 + i, 0.1));
  }
  ConfusionMatrix fwd(5), rev(5), a(5), b(5);
  for (int i = 0; i < 6; ++i) fwd.accumulate(p[i], g[i]);
  for (int i = 5; i >= 0; --i) rev.accumulate(p[i], g[i]);
  for (int i = 0; i < 3; ++i) a.accumulate(p[i], g[i]);
  for (int i = 3; i < 6; ++i) b.accumulate(p[i], g[i]);
  b.merge(a);
  CHECK(fwd == rev);
  CHECK(fwd == b);
}

TEST_CASE("psnr closed forms") {
  Image a(1, 3, 4, 4, 0.25f), b(1, 3, 4, 4, 0.75f);
  CHECK(std::abs(psnr(a, b) - 6.020599913279624) < 1e-9);
  CHECK(psnr(a, b) == psnr(b, a));
  CHECK(psnr(a, a) == kPsnrCap);
  Image c(1, 3, 4, 4, 0.35f);
  CHECK(psnr(a, c) > psnr(a, b));
  const double mse = std::pow(0.1, 2);
  CHECK(std::abs(psnr(a, c) - 10.0 * std::log10(1.0 / mse)) < 1e-5);
  CHECK_THROWS_AS(psnr(a, Image(1, 3, 4, 5)), ShapeError);
}

TEST_CASE("ssim identities") {
  const auto a = random_tensor<double>(2, 3, 16, 16, 9, 0.0, 1.0);
  CHECK(std::abs(ssim(a, a) - 1.0) <= 1e-6);

  Tensor<double> board(1, 1, 16, 16), inv(1, 1, 16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      board.at(0, 0, y, x) = (x + y) % 2;
      inv.at(0, 0, y, x) = 1.0 - board.at(0, 0, y, x);
    }
  CHECK(ssim(board, inv) < 0.0);

  const auto b = random_tensor<double>(2, 3, 16, 16, 10, 0.0, 1.0);
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-14));

  auto base = random_tensor<double>(1, 3, 24, 24, 11, 0.2, 0.6);
  auto other = random_tensor<double>(1, 3, 24, 24, 12, 0.2, 0.6);
  auto base_s = base, other_s = other;
  for (auto& v : base_s.data) v += 0.1;
  for (auto& v : other_s.data) v += 0.1;
  CHECK(std::abs(ssim(base, other) - ssim(base_s, other_s)) <= 1e-3);

  CHECK_THROWS_AS(ssim(Tensor<double>(1, 1, 8, 8), Tensor<double>(1, 1, 8, 8)), ShapeError);
}

TEST_CASE("ssim gradient agrees with central differences") {
  const auto a = random_tensor<double>(2, 3, 14, 13, 21, 0.1, 0.9);
  const auto b = random_tensor<double>(2, 3, 14, 13, 22, 0.1, 0.9);
  Tensor<double> g;
  const double s = ssim_with_grad(a, b, g);
  CHECK(s == doctest::Approx(ssim(a, b)).epsilon(1e-12));
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int dir = 0; dir < 20; ++dir) {
    Tensor<double> d = Tensor<double>::like(a);
    for (auto& v : d.data) v = n(rng);
    const double h = 1e-4;
    auto ap = a, am = a;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ap.data[i] += h * d.data[i];
      am.data[i] -= h * d.data[i];
    }
    const double fd = (ssim(ap, b) - ssim(am, b)) / (2 * h);
    double an = 0;
    for (std::size_t i = 0; i < a.size(); ++i) an += g.data[i] * d.data[i];
    CHECK(std::abs(fd - an) <= 1e-3 * std::max(std::abs(fd), 1e-8) + 1e-10);
  }
}
