#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "rainshield/gradient.hpp"
#include "rainshield/models.hpp"
#include "test_util.hpp"

using namespace rainshield;
using rainshield::testing::random_labels;
using rainshield::testing::random_tensor;

namespace {

// Central differences along random unit directions.
template <typename F>
void check_directions(const std::vector<double>& point, const std::vector<double>& grad, F&& f,
                      int directions, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const double h = 1e-4;
  for (int d = 0; d < directions; ++d) {
    std::vector<double> dir(point.size());
    double norm = 0.0;
    for (auto& v : dir) {
      v = n(rng);
      norm += v * v;
    }
    // unit length, so h is the step length along the direction
    for (auto& v : dir) v /= std::sqrt(norm);
    auto p = point, m = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
      p[i] += h * dir[i];
      m[i] -= h * dir[i];
    }
    const double fd = (f(p) - f(m)) / (2 * h);
    double an = 0.0;
    for (std::size_t i = 0; i < point.size(); ++i) an += grad[i] * dir[i];
    CAPTURE(d);
    CAPTURE(fd);
    CAPTURE(an);
    CHECK(std::abs(fd - an) <= 1e-3 * std::max(std::abs(fd), std::abs(an)));
  }
}

std::vector<LabelMap> labels_for(int n, int h, int w, int k, std::uint64_t seed) {
  std::vector<LabelMap> out;
  for (int i = 0; i < n; ++i) out.push_back(random_labels(h, w, k, seed + i, 0.1));
  return out;
}

}  // namespace

TEST_CASE("seg forward: shape, determinism, finiteness, receptive field") {
  const SegNet<float> net(SegDescriptor{}, 3);
  const auto x = random_tensor<float>(2, 3, 32, 24, 1, 0.0, 1.0);
  const auto a = net.forward(x);
  const auto b = net.forward(x);
  CHECK(a.n == 2);
  CHECK(a.c == 5);
  CHECK(a.h == 32);
  CHECK(a.w == 24);
  CHECK(a == b);
  for (auto v : a.data) CHECK(std::isfinite(v));
  auto x2 = x;
  x2.at(0, 1, 10, 10) += 0.5f;
  const auto c = net.forward(x2);
  CHECK(c.slice(0, 1) != a.slice(0, 1));
  CHECK(c.slice(1, 1) == a.slice(1, 1));
  CHECK_THROWS_AS(net.forward(Image(1, 3, 30, 32)), ShapeError);
  CHECK_THROWS_AS(net.forward(Image(1, 1, 32, 32)), ShapeError);
}

TEST_CASE("reference seg net has about 1e5 parameters") {
  const SegNet<float> net(SegDescriptor{}, 1);
  CHECK(net.param_count() > 50000);
  CHECK(net.param_count() < 200000);
}

TEST_CASE("initialization is deterministic by seed") {
  const SegNet<float> a(SegDescriptor{}, 9), b(SegDescriptor{}, 9), c(SegDescriptor{}, 10);
  CHECK(std::vector<float>(a.params().begin(), a.params().end()) ==
        std::vector<float>(b.params().begin(), b.params().end()));
  CHECK(a.param_hash() == b.param_hash());
  CHECK(a.param_hash() != c.param_hash());
  const DerainNet<float> d(DerainDescriptor{}, 9), e(DerainDescriptor{}, 9);
  CHECK(d.param_hash() == e.param_hash());
}

TEST_CASE("derain output stays in the box and zero rain is the identity") {
  DerainNet<float> net(DerainDescriptor{}, 4);
  auto x = random_tensor<float>(2, 3, 16, 16, 2, 0.0, 1.0);
  x.data[0] = 0.0f;
  x.data[1] = 1.0f;
  for (auto v : net.forward(x).data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  const auto rain = net.predicted_rain(x);
  const auto out = net.forward(x);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(out.data[i] == std::clamp(x.data[i] - rain.data[i], 0.0f, 1.0f));
  net.zero_tail();
  CHECK(net.forward(x) == x);
  for (auto v : net.predicted_rain(x).data) CHECK(v == 0.0f);
}

TEST_CASE("descriptor strings round trip") {
  SegDescriptor s{3, 7, 10};
  CHECK(SegDescriptor::parse(s.str()) == s);
  DerainDescriptor d{8, 3, DerainMode::direct};
  CHECK(DerainDescriptor::parse(d.str()) == d);
  CHECK_THROWS_AS(SegDescriptor::parse("derain:channels=1"), std::invalid_argument);
}

TEST_CASE("gradient oracle on linear and quadratic heads") {
  const auto x = random_tensor<double>(1, 3, 8, 8, 3);
  const auto g1 = gradient<double>(x, sum_head<double>());
  for (auto v : g1.d_input.data) CHECK(v == 1.0);
  Tensor<double> half(1, 3, 8, 8, 0.5);
  const auto g2 = gradient<double>(half, sum_of_squares_head<double>());
  for (auto v : g2.d_input.data) CHECK(v == 1.0);
  CHECK(g2.loss == doctest::Approx(0.25 * 192));

  const LossHead<double> bad = [](const Tensor<double>&, Tensor<double>& d) {
    d = Tensor<double>(1, 1, 1, 1);
    return 0.0;
  };
  CHECK_THROWS_AS(gradient<double>(x, bad), ShapeError);
}

TEST_CASE("seg cross-entropy gradient w.r.t. input matches finite differences") {
  // smallest admissible extent keeps the number of ReLU kinks within h small
  const auto net = SegNet<float>(SegDescriptor{}, 21).cast<double>();
  const auto x = random_tensor<double>(1, 3, 8, 8, 22, 0.0, 1.0);
  const auto head = cross_entropy_head<double>(labels_for(1, 8, 8, 5, 30));
  const auto g = gradient(net, x, head, Leaf::input);
  check_directions(x.data, g.d_input.data, [&](const std::vector<double>& p) {
    Tensor<double> t = x;
    t.data = p;
    Tensor<double> d;
    return head(net.forward(t), d);
  }, 20, 23);
}

TEST_CASE("seg cross-entropy gradient w.r.t. params matches finite differences") {
  const auto net = SegNet<float>(SegDescriptor{3, 5, 4}, 31).cast<double>();
  const auto x = random_tensor<double>(2, 3, 16, 16, 32, 0.0, 1.0);
  const auto head = cross_entropy_head<double>(labels_for(2, 16, 16, 5, 33));
  const auto g = gradient(net, x, head, Leaf::params);
  const std::vector<double> p0(net.params().begin(), net.params().end());
  check_directions(p0, g.d_params, [&](const std::vector<double>& p) {
    SegNet<double> m(net.descriptor(), p);
    Tensor<double> d;
    return head(m.forward(x), d);
  }, 20, 34);
}

TEST_CASE("defense loss gradient w.r.t. derain params matches finite differences") {
  for (auto kind : {DefenseLossKind::mse, DefenseLossKind::l1_plus_ssim}) {
    CAPTURE(to_string(kind));
    const auto net = DerainNet<float>(DerainDescriptor{8, 3, DerainMode::residual}, 41).cast<double>();
    const auto x = random_tensor<double>(2, 3, 16, 16, 42, 0.05, 0.95);
    const auto c = random_tensor<double>(2, 3, 16, 16, 43, 0.0, 1.0);
    const auto head = defense_head<double>(DefenseLoss{kind}, c);
    const auto g = gradient(net, x, head, Leaf::params);
    const std::vector<double> p0(net.params().begin(), net.params().end());
    check_directions(p0, g.d_params, [&](const std::vector<double>& p) {
      DerainNet<double> m(net.descriptor(), p);
      Tensor<double> d;
      return head(m.forward(x), d);
    }, 20, 44);
  }
}

TEST_CASE("composed derain-seg gradient w.r.t. input matches finite differences") {
  const auto derain = DerainNet<float>(DerainDescriptor{8, 2, DerainMode::residual}, 51).cast<double>();
  const auto seg = SegNet<float>(SegDescriptor{3, 5, 4}, 52).cast<double>();
  const auto x = random_tensor<double>(1, 3, 16, 16, 53, 0.05, 0.95);
  const auto head = cross_entropy_head<double>(labels_for(1, 16, 16, 5, 54));
  const auto g = gradient(derain, seg, x, head, Leaf::input);
  check_directions(x.data, g.d_input.data, [&](const std::vector<double>& p) {
    Tensor<double> t = x;
    t.data = p;
    Tensor<double> d;
    return head(seg.forward(derain.forward(t)), d);
  }, 20, 55);
}

TEST_CASE("checkpoint round trip is bitwise") {
  const auto dir = rainshield::testing::scratch_dir("ckpt");
  const SegNet<float> seg(SegDescriptor{}, 5);
  save_checkpoint(dir / "seg.ckpt", seg, "abc");
  const auto loaded = load_seg_checkpoint(dir / "seg.ckpt");
  const auto x = random_tensor<float>(1, 3, 16, 16, 6, 0.0, 1.0);
  CHECK(loaded.forward(x) == seg.forward(x));
  CHECK(read_checkpoint_header(dir / "seg.ckpt").config_hash == "abc");

  const DerainNet<float> der(DerainDescriptor{}, 5);
  save_checkpoint(dir / "der.ckpt", der);
  CHECK(load_derain_checkpoint(dir / "der.ckpt").forward(x) == der.forward(x));
}

TEST_CASE("checkpoint loader rejects mismatches and corruption") {
  const auto dir = rainshield::testing::scratch_dir("ckpt_err");
  const SegNet<float> seg(SegDescriptor{}, 5);
  save_checkpoint(dir / "seg.ckpt", seg);
  CHECK_THROWS_AS(load_derain_checkpoint(dir / "seg.ckpt"), CheckpointError);
  const SegDescriptor other{3, 5, 8};
  CHECK_THROWS_AS(load_seg_checkpoint(dir / "seg.ckpt", &other), CheckpointError);
  CHECK_THROWS_AS(load_seg_checkpoint(dir / "nope.ckpt"), CheckpointError);

  std::ifstream in(dir / "seg.ckpt", std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();

  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream(dir / name, std::ios::binary) << content;
    return dir / name;
  };
  std::string v2 = bytes;
  v2.replace(v2.find("format_version=1"), 16, "format_version=2");
  CHECK_THROWS_AS(load_seg_checkpoint(write("v2.ckpt", v2)), CheckpointError);
  CHECK_THROWS_AS(load_seg_checkpoint(write("trunc.ckpt", bytes.substr(0, bytes.size() - 4))), CheckpointError);
  CHECK_THROWS_AS(load_seg_checkpoint(write("extra.ckpt", bytes + "xx")), CheckpointError);
  std::string flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x10;
  CHECK_THROWS_AS(load_seg_checkpoint(write("flip.ckpt", flipped)), CheckpointError);
}
