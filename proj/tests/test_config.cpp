#include <cstdlib>
#include <fstream>

#include "doctest.h"
#include "rainshield/config.hpp"
#include "rainshield/plot.hpp"
#include "test_util.hpp"

using namespace rainshield;

TEST_CASE("defaults parse and match the documented experiment") {
  const auto rc = parse_run_config(default_config());
  CHECK(rc.data.train_samples == 2000);
  CHECK(rc.data.test_samples == 200);
  CHECK(rc.data.scene.height == 64);
  CHECK(rc.data.scene.num_classes == 5);
  CHECK(rc.eval.options.seeds.size() == 3);
  // clean column plus {bim3, bim5, bim10, pgd10, cw10} x two budgets
  CHECK(rc.eval.grid.size() == 11);
  CHECK(rc.at.train_attack.method == AttackMethod::bim);
  CHECK(rc.at.train_attack.steps == 5);
  CHECK(rc.at.train_attack.epsilon == doctest::Approx(8.0 / 255));
  CHECK(rc.pearl.defense_loss.kind == DefenseLossKind::mse);
  CHECK(rc.pretrain_seg.optimizer.kind == OptimizerKind::sgd_momentum);
  CHECK(rc.pretrain_derain.optimizer.kind == OptimizerKind::adam);
  CHECK(rc.pearl_ama.ama_enabled);
  CHECK_FALSE(rc.pearl.ama_enabled);
  CHECK(rc.models.alt_seg.num_classes == rc.models.seg.num_classes);
  CHECK_FALSE(rc.eval.options.attack_through_derain);
}

TEST_CASE("merge rejects unknown keys and type changes") {
  auto cfg = default_config();
  CHECK_THROWS_AS(merge_config(cfg, Json{{"nope", 1}}), ConfigError);
  CHECK_THROWS_AS(merge_config(cfg, Json{{"data", {{"train_samples", "many"}}}}), ConfigError);
  CHECK_THROWS_AS(merge_config(cfg, Json{{"data", {{"train_samples", 1.5}}}}), ConfigError);
  CHECK_THROWS_AS(merge_config(cfg, Json{{"data", 3}}), ConfigError);
  // integers are accepted where reals are expected
  merge_config(cfg, Json{{"data", {{"rain", {{"intensity", 1}}}}}});
  CHECK(cfg["data"]["rain"]["intensity"] == 1);
  merge_config(cfg, Json{{"train", {{"pearl", {{"ama_epsilon", 0.01}}}}}});
  CHECK(parse_run_config(cfg).pearl.ama_epsilon.value() == doctest::Approx(0.01));
  try {
    merge_config(cfg, Json{{"train", {{"at", {{"optimiser", 1}}}}}});
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.at.optimiser") != std::string::npos);
  }
}

TEST_CASE("dotted overrides parse JSON values and fall back to strings") {
  auto cfg = default_config();
  apply_override(cfg, "train.at.attack.epsilon", "0.02");
  apply_override(cfg, "train.pearl.defense_loss.kind", "l1");
  apply_override(cfg, "eval.seeds", "[5, 6]");
  apply_override(cfg, "eval.cross_model", "false");
  const auto rc = parse_run_config(cfg);
  CHECK(rc.at.train_attack.epsilon == doctest::Approx(0.02));
  CHECK(rc.pearl.defense_loss.kind == DefenseLossKind::l1);
  CHECK(rc.eval.options.seeds == std::vector<std::uint64_t>{5, 6});
  CHECK_FALSE(rc.eval.cross_model);
  CHECK_THROWS_AS(apply_override(cfg, "train..at", "1"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "train.at.epochs", "two"), ConfigError);
}

TEST_CASE("semantic validation of parsed values") {
  const auto bad = [](const char* path, const char* value) {
    auto cfg = default_config();
    apply_override(cfg, path, value);
    CHECK_THROWS_AS(parse_run_config(cfg), ConfigError);
  };
  bad("train.at.attack.method", "\"fgsmx\"");
  bad("train.at.attack.epsilon", "2.0");
  bad("train.at.attack.alpha", "0.5");
  bad("train.pearl.optimizer.kind", "\"rmsprop\"");
  bad("train.pearl.lr_schedule", "\"step\"");
  bad("train.at.seg_input", "\"foggy\"");
  bad("data.scene.height", "60");
  bad("models.derain.mode", "\"sideways\"");
  bad("eval.pipelines", "[\"seg\", \"seg\"]");
  bad("eval.pipelines", "[\"mystery\"]");
  bad("eval.seeds", "[]");
  bad("run_name", "\"a/b\"");
  auto cfg = default_config();
  cfg["eval"]["grid"][0]["stepz"] = 3;
  CHECK_THROWS_AS(parse_run_config(cfg), ConfigError);
}

TEST_CASE("precedence: defaults < file < environment < flags") {
  const auto dir = testing::scratch_dir("config_precedence");
  const auto file = dir / "c.json";
  std::ofstream(file) << R"({"output_root": "from_file", "train": {"at": {"epochs": 3}}, "data": {"test_samples": 50}})";
  setenv(kOutputRootEnv, "from_env", 1);
  auto cfg = resolve_config(&file, {"train.at.epochs=5"});
  CHECK(cfg["output_root"] == "from_env");
  CHECK(cfg["train"]["at"]["epochs"] == 5);
  CHECK(cfg["data"]["test_samples"] == 50);
  CHECK(cfg["data"]["train_samples"] == 2000);
  cfg = resolve_config(&file, {"output_root=from_flag"});
  CHECK(cfg["output_root"] == "from_flag");
  unsetenv(kOutputRootEnv);
  cfg = resolve_config(&file, {});
  CHECK(cfg["output_root"] == "from_file");
  CHECK_THROWS_AS(resolve_config(&file, {"no_equals_sign"}), ConfigError);
  const auto missing = dir / "missing.json";
  CHECK_THROWS_AS(resolve_config(&missing, {}), ConfigError);
  std::ofstream(dir / "broken.json") << "{ not json";
  const auto broken = dir / "broken.json";
  CHECK_THROWS_AS(resolve_config(&broken, {}), ConfigError);
}

TEST_CASE("data splits are disjoint and deterministic") {
  auto cfg = default_config();
  apply_override(cfg, "data.train_samples", "3");
  apply_override(cfg, "data.val_samples", "3");
  apply_override(cfg, "data.test_samples", "3");
  const auto rc = parse_run_config(cfg);
  const auto a = rc.data.make_train(), b = rc.data.make_val(), c = rc.data.make_test();
  CHECK(a.hash() == rc.data.make_train().hash());
  CHECK(a.hash() != b.hash());
  CHECK(b.hash() != c.hash());
}

TEST_CASE("rain calibration reaches the target severity") {
  SceneParams s;
  s.height = 32;
  s.width = 32;
  const auto c = calibrate_rain(s, RainParams{}, 20, 17.45, 0.05);
  CHECK(std::abs(c.psnr - 17.45) <= 0.05);
  CHECK(c.rain.intensity > 0.0);
  CHECK(c.rain.intensity <= 1.0);
  CHECK_THROWS(calibrate_rain(s, RainParams{}, 5, 200.0));
}

TEST_CASE("line plot renders series and text") {
  LinePlot p;
  p.title = "miou vs eps";
  p.x_ticks = {"0", "4/255", "8/255"};
  p.series = {{"a", {0.9, 0.5, 0.2}}, {"b", {0.8, std::nan(""), 0.7}}};
  const auto r = render_line_plot(p);
  CHECK(r.width == 640);
  CHECK(r.channels == 3);
  std::size_t colored = 0;
  for (std::size_t i = 0; i < r.pixels.size(); i += 3)
    if (!(r.pixels[i] == r.pixels[i + 1] && r.pixels[i + 1] == r.pixels[i + 2])) ++colored;
  CHECK(colored > 100);
  p.series[0].y.pop_back();
  CHECK_THROWS_AS(render_line_plot(p), std::invalid_argument);
  Raster canvas{20, 10, 3, std::vector<std::uint8_t>(600, 255)};
  CHECK(draw_text(canvas, 0, 0, "ab", {0, 0, 0}) == text_width("ab"));
  CHECK(std::count(canvas.pixels.begin(), canvas.pixels.end(), 0) > 0);
}
