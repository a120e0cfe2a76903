#include <cmath>

#include "doctest.h"
#include "rainshield/training.hpp"
#include "test_util.hpp"

using namespace rainshield;

namespace {

const SegDescriptor kSeg{3, 5, 4};
const DerainDescriptor kDerain{6, 2, DerainMode::residual};

Dataset tiny(int n, std::uint64_t seed = 1) {
  SceneParams s;
  s.height = 16;
  s.width = 16;
  s.shapes_per_image = 2;
  s.seed = seed;
  RainParams r;
  r.streak_length = 5;
  r.seed = seed;
  return make_dataset(s, r, n);
}

TrainConfig seg_cfg(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 4;
  c.optimizer.kind = OptimizerKind::sgd_momentum;
  c.optimizer.learning_rate = 1e-2;
  c.seed = 3;
  return c;
}

TrainConfig derain_cfg(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 4;
  c.optimizer.learning_rate = 1e-3;
  c.train_attack = AttackSpec::bim(8.0f / 255.0f, 2);
  c.seed = 4;
  return c;
}

std::vector<float> params_of(const auto& m) { return {m.params().begin(), m.params().end()}; }

}  // namespace

TEST_CASE("zero epochs leave parameters unchanged") {
  const auto d = tiny(8);
  SegNet<float> seg(kSeg, 1);
  const auto before = params_of(seg);
  const auto r = pretrain_seg(seg, d, seg_cfg(0));
  CHECK(params_of(seg) == before);
  CHECK(r.history.empty());
  DerainNet<float> der(kDerain, 1);
  const auto dbefore = params_of(der);
  pretrain_derain(der, d, derain_cfg(0));
  CHECK(params_of(der) == dbefore);
}

TEST_CASE("adversarial training with a zero budget is clean training") {
  const auto d = tiny(10);
  auto cfg = seg_cfg(2);
  cfg.trace_updates = true;
  SegNet<float> a(kSeg, 2), b(kSeg, 2);
  const auto ra = pretrain_seg(a, d, cfg);
  cfg.train_attack = AttackSpec::bim(0.0f, 3);
  const auto rb = train_at(b, d, cfg);
  CHECK(ra.step_hashes.size() == 6);
  CHECK(ra.step_hashes == rb.step_hashes);
  CHECK(params_of(a) == params_of(b));
  CHECK(rb.attack_calls == rb.batches);
}

TEST_CASE("pearl with a zero budget is derain pretraining") {
  const auto d = tiny(10);
  const SegNet<float> seg(kSeg, 5);
  auto cfg = derain_cfg(2);
  cfg.trace_updates = true;
  DerainNet<float> a(kDerain, 6), b(kDerain, 6);
  const auto ra = pretrain_derain(a, d, cfg);
  cfg.train_attack = AttackSpec::bim(0.0f, 2);
  const auto rb = train_pearl(b, seg, d, cfg);
  CHECK(ra.step_hashes == rb.step_hashes);
  CHECK(params_of(a) == params_of(b));
}

TEST_CASE("pearl+ama with a zero mirror budget is pearl") {
  const auto d = tiny(10);
  const SegNet<float> seg(kSeg, 5);
  auto cfg = derain_cfg(1);
  cfg.trace_updates = true;
  DerainNet<float> a(kDerain, 6), b(kDerain, 6);
  const auto ra = train_pearl(a, seg, d, cfg);
  cfg.ama_enabled = true;
  cfg.ama_epsilon = 0.0f;
  const auto rb = train_pearl_ama(b, seg, d, cfg);
  CHECK(ra.step_hashes == rb.step_hashes);
  CHECK(rb.ama_calls == rb.batches);

  cfg.ama_epsilon.reset();
  DerainNet<float> c(kDerain, 6);
  const auto rc = train_pearl_ama(c, seg, d, cfg);
  CHECK(rc.step_hashes != ra.step_hashes);

  cfg.ama_enabled = false;
  CHECK_THROWS_AS(train_pearl_ama(c, seg, d, cfg), std::invalid_argument);
}

TEST_CASE("pearl leaves the segmentation model untouched and only updates derain") {
  const auto d = tiny(8);
  const SegNet<float> seg(kSeg, 7);
  const auto h0 = seg.param_hash();
  DerainNet<float> der(kDerain, 8);
  const auto before = params_of(der);
  for (auto variant : {AmaVariant::independent_descent, AmaVariant::mirror_of_naa}) {
    auto cfg = derain_cfg(1);
    cfg.ama_enabled = true;
    cfg.ama_variant = variant;
    const auto r = train_pearl_ama(der, seg, d, cfg);
    CHECK(seg.param_hash() == h0);
    CHECK(r.optimizer_param_count == der.param_count());
    CHECK(r.last_grad_norm > 0.0);
    CHECK(r.attack_calls == r.batches);
  }
  CHECK(params_of(der) != before);
}

TEST_CASE("training is reproducible") {
  const auto d = tiny(8);
  SegNet<float> a(kSeg, 9), b(kSeg, 9);
  auto cfg = seg_cfg(1);
  cfg.train_attack = AttackSpec::pgd(8.0f / 255.0f, 2, 0);
  train_at(a, d, cfg);
  train_at(b, d, cfg);
  CHECK(a.param_hash() == b.param_hash());
  DerainNet<float> x(kDerain, 1), y(kDerain, 1);
  const SegNet<float> seg(kSeg, 2);
  train_pearl(x, seg, d, derain_cfg(1));
  train_pearl(y, seg, d, derain_cfg(1));
  CHECK(x.param_hash() == y.param_hash());
}

TEST_CASE("segmentation loss decreases and validation drives best-epoch selection") {
  const auto d = tiny(32);
  const auto v = tiny(8, 500);
  SegNet<float> seg(kSeg, 3);
  auto cfg = seg_cfg(8);
  TrainHooks hooks;
  hooks.validation = &v;
  int calls = 0;
  hooks.on_epoch = [&](const EpochRecord& r, std::span<const float> p) {
    CHECK(r.epoch == calls++);
    CHECK(p.size() == seg.param_count());
    CHECK(std::isfinite(r.val_allacc));
  };
  const auto r = pretrain_seg(seg, d, cfg, hooks);
  CHECK(calls == 8);
  REQUIRE(r.history.size() == 8);
  CHECK(r.history.back().loss < r.history.front().loss);
  CHECK(r.best_epoch >= 0);
  CHECK(r.best_epoch < 8);
  double best = 0;
  for (const auto& e : r.history) best = std::max(best, e.val_allacc);
  CHECK(r.history[static_cast<std::size_t>(r.best_epoch)].val_allacc == best);
}

TEST_CASE("divergence is reported") {
  const auto d = tiny(8);
  SegNet<float> seg(kSeg, 3);
  auto cfg = seg_cfg(3);
  cfg.optimizer.learning_rate = 1e30;
  CHECK_THROWS_AS(pretrain_seg(seg, d, cfg), DivergenceError);
}

TEST_CASE("config validation") {
  auto cfg = seg_cfg(1);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = seg_cfg(-1);
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = seg_cfg(1);
  CHECK(cfg.train_attack.method == AttackMethod::bim);
}

TEST_CASE("nat assembly puts the derain model first") {
  auto der = std::make_shared<const DerainNet<float>>(kDerain, 1);
  auto seg = std::make_shared<const SegNet<float>>(kSeg, 1);
  const auto p = assemble_nat(der, seg);
  const auto st = p.stages();
  REQUIRE(st.size() == 2);
  CHECK(st[0] == Pipeline::Stage::derain);
  CHECK(st[1] == Pipeline::Stage::seg);
  for (int hw : {8, 16, 24}) {
    const auto x = rainshield::testing::random_tensor<float>(1, 3, hw, hw * 2, 1, 0, 1);
    CHECK(p.logits(x) == seg->forward(der->forward(x)));
  }
  CHECK_THROWS_AS(assemble_nat(nullptr, seg), std::invalid_argument);
  CHECK_THROWS_AS(Pipeline("x", nullptr), std::invalid_argument);
}
