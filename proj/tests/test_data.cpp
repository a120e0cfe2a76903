#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "rainshield/data_synth.hpp"
#include "rainshield/hash.hpp"
#include "rainshield/image_io.hpp"
#include "rainshield/metrics.hpp"
#include "test_util.hpp"

using namespace rainshield;
namespace fs = std::filesystem;

TEST_CASE("scene synthesis is deterministic by seed") {
  SceneParams p;
  p.seed = 7;
  Rng r1(p.seed), r2(p.seed);
  const auto a = synth_scene(p, r1);
  const auto b = synth_scene(p, r2);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("empty scene is all background") {
  SceneParams p;
  p.shapes_per_image = 0;
  Rng r(3);
  const auto [img, labels] = synth_scene(p, r);
  for (auto v : labels.ids) CHECK(v == 0);
  for (auto v : img.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("three shapes give at most four label ids") {
  SceneParams p;
  p.shapes_per_image = 3;
  for (int s = 0; s < 20; ++s) {
    Rng r(100 + s);
    const auto [img, labels] = synth_scene(p, r);
    std::set<int> ids(labels.ids.begin(), labels.ids.end());
    CHECK(ids.size() <= 4);
    CHECK(*ids.rbegin() < p.num_classes);
  }
}

TEST_CASE("scene parameter validation") {
  SceneParams p;
  p.height = 60;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p.height = 8;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = SceneParams{};
  p.num_classes = 1;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = SceneParams{};
  p.background_noise_amp = 0.3;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  RainParams r;
  r.streak_length = 0;
  CHECK_THROWS_AS(r.validate(), std::invalid_argument);
  r = RainParams{};
  r.angle_high = 200;
  CHECK_THROWS_AS(r.validate(), std::invalid_argument);
}

TEST_CASE("rain layer degenerate cases and bounds") {
  RainParams r;
  r.density = 0.0;
  Rng g(1);
  for (auto v : synth_rain_layer(64, 64, r, g).data) CHECK(v == 0.0f);
  r = RainParams{};
  r.intensity = 0.0;
  for (auto v : synth_rain_layer(64, 64, r, g).data) CHECK(v == 0.0f);

  r = RainParams{};
  for (int s = 0; s < 10; ++s) {
    Rng rng(50 + s);
    const auto rain = synth_rain_layer(64, 64, r, rng);
    float mx = 0.0f;
    std::size_t nonzero = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) nonzero += rain.at(0, 0, y, x) > 0.0f;
    for (auto v : rain.data) {
      CHECK(v >= 0.0f);
      mx = std::max(mx, v);
    }
    CHECK(mx <= static_cast<float>(r.intensity));
    const double frac = static_cast<double>(nonzero) / (64.0 * 64.0);
    CHECK(frac >= r.density / 2);
    CHECK(frac <= std::min(1.0, r.density * r.streak_length * 3));
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        CHECK(rain.at(0, 1, y, x) == rain.at(0, 0, y, x));
        CHECK(rain.at(0, 2, y, x) == rain.at(0, 0, y, x));
      }
  }
}

TEST_CASE("apply_rain clips and adds") {
  Image c(1, 3, 8, 8, 0.5f), r(1, 3, 8, 8, 0.3f);
  for (auto v : apply_rain(c, r).data) CHECK(v == doctest::Approx(0.8f));
  for (auto v : apply_rain(c, Image::like(c)).data) CHECK(v == 0.5f);
  Image one(1, 3, 8, 8, 1.0f);
  for (auto v : apply_rain(one, r).data) CHECK(v == 1.0f);
  CHECK_THROWS_AS(apply_rain(c, Image(1, 3, 8, 16)), ShapeError);
}

TEST_CASE("dataset invariants over 100 samples") {
  const auto d = make_dataset(SceneParams{}, RainParams{}, 100);
  REQUIRE(d.size() == 100);
  for (const auto& s : d.samples) {
    for (std::size_t i = 0; i < s.clean.size(); ++i) {
      CHECK(s.rain.data[i] >= 0.0f);
      const float want = std::clamp(s.clean.data[i] + s.rain.data[i], 0.0f, 1.0f);
      if (s.rainy.data[i] != want) FAIL("rainy != clip(clean + rain)");
    }
    for (auto v : s.labels.ids) CHECK((v < 5 || v == LabelMap::kIgnore));
  }
}

TEST_CASE("dataset determinism and seed separation") {
  const auto a = make_dataset(SceneParams{}, RainParams{}, 1);
  const auto b = make_dataset(SceneParams{}, RainParams{}, 1);
  CHECK(a.samples[0].clean == b.samples[0].clean);
  CHECK(a.samples[0].rainy == b.samples[0].rainy);
  CHECK(a.hash() == b.hash());

  SceneParams s2;
  s2.seed = 100000;
  RainParams r2;
  r2.seed = 100000;
  const auto x = make_dataset(SceneParams{}, RainParams{}, 30);
  const auto y = make_dataset(s2, r2, 30);
  std::set<std::uint64_t> hx;
  for (const auto& s : x.samples) hx.insert(fnv1a<float>(s.clean.data));
  for (const auto& s : y.samples) CHECK(hx.count(fnv1a<float>(s.clean.data)) == 0);
}

TEST_CASE("save and load round trip within 8-bit quantization") {
  const auto dir = rainshield::testing::scratch_dir("dataset_roundtrip");
  const auto d = make_dataset(SceneParams{}, RainParams{}, 5);
  save_dataset(dir, d);
  const auto l = load_dataset(dir);
  REQUIRE(l.size() == 5);
  CHECK(l.scene.seed == d.scene.seed);
  CHECK(l.rain.density == d.rain.density);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(rainshield::testing::max_abs_diff(l.samples[i].clean.data, d.samples[i].clean.data) <= 1.0 / 255 + 1e-7);
    CHECK(rainshield::testing::max_abs_diff(l.samples[i].rainy.data, d.samples[i].rainy.data) <= 1.0 / 255 + 1e-7);
    CHECK(rainshield::testing::max_abs_diff(l.samples[i].rain.data, d.samples[i].rain.data) <= 1.0 / 255 + 1e-7);
    CHECK(l.samples[i].labels == d.samples[i].labels);
  }
}

TEST_CASE("loader error paths name the offending file") {
  const auto empty = rainshield::testing::scratch_dir("dataset_empty");
  try {
    load_dataset(empty);
    FAIL("expected an error");
  } catch (const DatasetError& e) {
    CHECK(std::string(e.what()).find("manifest") != std::string::npos);
  }

  const auto dir = rainshield::testing::scratch_dir("dataset_missing");
  save_dataset(dir, make_dataset(SceneParams{}, RainParams{}, 10));
  fs::remove(dir / "rainy_00009.png");
  try {
    load_dataset(dir);
    FAIL("expected an error");
  } catch (const DatasetError& e) {
    CHECK(std::string(e.what()).find("rainy_00009.png") != std::string::npos);
  }

  const auto bad = rainshield::testing::scratch_dir("dataset_corrupt");
  save_dataset(bad, make_dataset(SceneParams{}, RainParams{}, 2));
  { std::ofstream(bad / "clean_00001.png", std::ios::binary) << "not a png"; }
  try {
    load_dataset(bad);
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("clean_00001.png") != std::string::npos);
  }
}

TEST_CASE("png raster round trip") {
  const auto dir = rainshield::testing::scratch_dir("png");
  Raster r{5, 3, 3, {}};
  for (int i = 0; i < 45; ++i) r.pixels.push_back(static_cast<std::uint8_t>(i * 5));
  write_png(dir / "x.png", r);
  const auto back = read_png(dir / "x.png");
  CHECK(back.width == 5);
  CHECK(back.height == 3);
  CHECK(back.channels == 3);
  CHECK(back.pixels == r.pixels);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), IoError);
}
