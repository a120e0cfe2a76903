#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rainshield/tensor.hpp"

namespace rainshield {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

struct SceneParams {
  int height = 64;
  int width = 64;
  /// Foreground shape classes plus the background class 0.
  int num_classes = 5;
  int shapes_per_image = 4;
  double background_noise_amp = 0.08;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument.
  void validate() const;
};

// Defaults are the output of `rainshield calibrate-rain` on the default scene
// corpus: corpus-mean PSNR(rainy, clean) lands near 17.45 dB.
struct RainParams {
  double density = 0.05;
  int streak_length = 15;
  double angle_low = 60.0;
  double angle_high = 120.0;
  double intensity = 0.6;
  std::uint64_t seed = 1;

  void validate() const;
};

struct PairedSample {
  Image clean;
  Image rainy;
  Image rain;
  LabelMap labels;
};

struct Dataset {
  SceneParams scene;
  RainParams rain;
  std::vector<PairedSample> samples;

  std::size_t size() const { return samples.size(); }
  /// Content hash over all images and label maps.
  std::uint64_t hash() const;
};

/// Shapes (disks, rectangles, triangles, ellipses) in class colors over a
/// textured background. Deterministic in the generator state.
std::pair<Image, LabelMap> synth_scene(const SceneParams& params, Rng& rng);

/// Thresholded uniform noise convolved with a unit-sum line kernel, rescaled
/// so the maximum equals `intensity`; broadcast to 3 channels.
Image synth_rain_layer(int height, int width, const RainParams& params, Rng& rng);

/// clip(clean + rain, 0, 1)
Image apply_rain(const Image& clean, const Image& rain);

/// Sample i uses scene seed scene.seed + i and rain seed rain.seed + i.
Dataset make_dataset(const SceneParams& scene, const RainParams& rain, int n);

struct RainCalibration {
  RainParams rain;
  double psnr = 0.0;
  double ssim = 0.0;
  int iterations = 0;
};

/// Bisects rain intensity until the corpus-mean PSNR(rainy, clean) over
/// `samples` scenes is within `tolerance` dB of `target_psnr`. Throws
/// std::runtime_error when the target lies outside the reachable range.
RainCalibration calibrate_rain(const SceneParams& scene, const RainParams& start, int samples,
                               double target_psnr = 17.45, double tolerance = 0.05);

/// Writes clean_/rainy_/rain_/label_%05d.png plus manifest.txt.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

inline constexpr int kManifestVersion = 1;

/// Stacks the chosen samples' images into a batch.
Image batch_images(const Dataset& d, std::span<const std::size_t> indices,
                   Image PairedSample::*field);
std::vector<LabelMap> batch_labels(const Dataset& d, std::span<const std::size_t> indices);

/// Fixed class colors for visualization; index LabelMap::kIgnore is black.
std::array<std::uint8_t, 3> class_color(int class_id);

}  // namespace rainshield
