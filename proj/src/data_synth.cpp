#include "rainshield/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "rainshield/hash.hpp"
#include "rainshield/image_io.hpp"
#include "rainshield/metrics.hpp"

namespace rainshield {

void SceneParams::validate() const {
  if (height < 16 || width < 16 || height % 8 || width % 8)
    throw std::invalid_argument("SceneParams: height/width must be >= 16 and divisible by 8, got " +
                                std::to_string(height) + "x" + std::to_string(width));
  if (num_classes < 2 || num_classes > 254)
    throw std::invalid_argument("SceneParams: num_classes must be in [2, 254]");
  if (shapes_per_image < 0) throw std::invalid_argument("SceneParams: shapes_per_image < 0");
  if (!(background_noise_amp >= 0.0 && background_noise_amp <= 0.2))
    throw std::invalid_argument("SceneParams: background_noise_amp outside [0, 0.2]");
}

void RainParams::validate() const {
  if (!(density >= 0.0 && density <= 1.0)) throw std::invalid_argument("RainParams: density");
  if (streak_length < 1) throw std::invalid_argument("RainParams: streak_length < 1");
  if (!(angle_low >= 0.0 && angle_high <= 180.0 && angle_low <= angle_high))
    throw std::invalid_argument("RainParams: angle range must lie within [0, 180]");
  if (!(intensity >= 0.0 && intensity <= 1.0)) throw std::invalid_argument("RainParams: intensity");
}

std::array<std::uint8_t, 3> class_color(int class_id) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 12> kPalette{{
      {64, 64, 64},    {220, 60, 60},  {60, 180, 75},  {70, 110, 230}, {240, 200, 40},
      {170, 70, 200},  {60, 200, 220}, {245, 130, 48}, {250, 190, 212}, {128, 128, 0},
      {170, 255, 195}, {128, 0, 0},
  }};
  if (class_id == LabelMap::kIgnore || class_id < 0) return {0, 0, 0};
  return kPalette[static_cast<std::size_t>(class_id) % kPalette.size()];
}

namespace {

using Color = std::array<float, 3>;

Color hsv_to_rgb(double h, double s, double v) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int sector = static_cast<int>(hh);
  const double f = hh - sector;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = v, g = t, b = p;
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

// Foreground class c in [1, K) gets a hue-spaced base color.
Color class_base_color(int c, int num_classes) {
  const double hue = static_cast<double>(c - 1) / static_cast<double>(num_classes - 1);
  return hsv_to_rgb(hue, 0.55, 0.8);
}

// Coarse random grid, bilinearly upsampled; values in [-1, 1].
std::vector<float> value_noise(int h, int w, int cell, Rng& rng) {
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  const int gh = h / cell + 2;
  const int gw = w / cell + 2;
  std::vector<float> grid(static_cast<std::size_t>(gh) * gw);
  for (auto& g : grid) g = u(rng);
  std::vector<float> out(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    const float fy = static_cast<float>(y) / cell;
    const int y0 = static_cast<int>(fy);
    const float ty = fy - y0;
    for (int x = 0; x < w; ++x) {
      const float fx = static_cast<float>(x) / cell;
      const int x0 = static_cast<int>(fx);
      const float tx = fx - x0;
      auto g = [&](int yy, int xx) { return grid[static_cast<std::size_t>(yy) * gw + xx]; };
      const float top = g(y0, x0) * (1 - tx) + g(y0, x0 + 1) * tx;
      const float bot = g(y0 + 1, x0) * (1 - tx) + g(y0 + 1, x0 + 1) * tx;
      out[static_cast<std::size_t>(y) * w + x] = top * (1 - ty) + bot * ty;
    }
  }
  return out;
}

enum class ShapeKind { disk, rectangle, triangle, ellipse };

struct Shape {
  ShapeKind kind;
  double cx, cy, rx, ry, angle;
  std::array<double, 6> tri{};

  bool contains(double px, double py) const {
    const double dx = px - cx, dy = py - cy;
    const double cs = std::cos(angle), sn = std::sin(angle);
    const double u = cs * dx + sn * dy;
    const double v = -sn * dx + cs * dy;
    switch (kind) {
      case ShapeKind::disk: return dx * dx + dy * dy <= rx * rx;
      case ShapeKind::rectangle: return std::abs(u) <= rx && std::abs(v) <= ry;
      case ShapeKind::ellipse: return (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0;
      case ShapeKind::triangle: {
        auto edge = [&](int a, int b) {
          return (tri[2 * b] - tri[2 * a]) * (py - tri[2 * a + 1]) -
                 (tri[2 * b + 1] - tri[2 * a + 1]) * (px - tri[2 * a]);
        };
        const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
        return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
      }
    }
    return false;
  }
};

}  // namespace

std::pair<Image, LabelMap> synth_scene(const SceneParams& p, Rng& rng) {
  p.validate();
  const int h = p.height, w = p.width;
  Image img(1, 3, h, w);
  LabelMap labels(h, w, 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const float amp = static_cast<float>(p.background_noise_amp);

  Color bg;
  const double gray = 0.35 + 0.25 * unit(rng);
  for (auto& v : bg) v = static_cast<float>(gray + 0.08 * (unit(rng) - 0.5));
  for (int ch = 0; ch < 3; ++ch) {
    const auto coarse = value_noise(h, w, 8, rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float fine = static_cast<float>(unit(rng) * 2.0 - 1.0);
        img.at(0, ch, y, x) = bg[static_cast<std::size_t>(ch)] +
                              amp * coarse[static_cast<std::size_t>(y) * w + x] + 0.5f * amp * fine;
      }
  }

  const double lo = std::min(h, w) / 10.0;
  const double hi = std::min(h, w) / 4.0;
  for (int s = 0; s < p.shapes_per_image; ++s) {
    const int cls = 1 + static_cast<int>(unit(rng) * (p.num_classes - 1)) % (p.num_classes - 1);
    Shape shape{};
    shape.kind = static_cast<ShapeKind>(static_cast<int>(unit(rng) * 4) % 4);
    shape.cx = unit(rng) * w;
    shape.cy = unit(rng) * h;
    shape.rx = lo + (hi - lo) * unit(rng);
    shape.ry = lo + (hi - lo) * unit(rng);
    shape.angle = unit(rng) * std::numbers::pi;
    for (int v = 0; v < 3; ++v) {
      const double a = shape.angle + v * 2.0 * std::numbers::pi / 3.0 + 0.4 * (unit(rng) - 0.5);
      shape.tri[static_cast<std::size_t>(2 * v)] = shape.cx + shape.rx * 1.3 * std::cos(a);
      shape.tri[static_cast<std::size_t>(2 * v + 1)] = shape.cy + shape.rx * 1.3 * std::sin(a);
    }
    Color col = class_base_color(cls, p.num_classes);
    for (auto& v : col) v += static_cast<float>(0.12 * (unit(rng) - 0.5));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!shape.contains(x + 0.5, y + 0.5)) continue;
        labels.at(y, x) = static_cast<std::uint8_t>(cls);
        for (int ch = 0; ch < 3; ++ch)
          img.at(0, ch, y, x) = col[static_cast<std::size_t>(ch)] +
                                0.5f * amp * static_cast<float>(unit(rng) * 2.0 - 1.0);
      }
  }
  for (auto& v : img.data) v = std::clamp(v, 0.f, 1.f);
  return {std::move(img), std::move(labels)};
}

Image synth_rain_layer(int height, int width, const RainParams& p, Rng& rng) {
  p.validate();
  Image rain(1, 3, height, width);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double theta =
      (p.angle_low + (p.angle_high - p.angle_low) * unit(rng)) * std::numbers::pi / 180.0;

  // Unit-sum line kernel as a list of pixel offsets.
  std::map<std::pair<int, int>, double> taps;
  const int len = p.streak_length;
  for (int t = 0; t < len; ++t) {
    const double s = t - (len - 1) / 2.0;
    const int dx = static_cast<int>(std::lround(s * std::cos(theta)));
    const int dy = static_cast<int>(std::lround(s * std::sin(theta)));
    taps[{dy, dx}] += 1.0 / len;
  }

  std::vector<double> field(static_cast<std::size_t>(height) * width, 0.0);
  const double threshold = 1.0 - p.density;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      if (!(unit(rng) > threshold)) continue;
      for (const auto& [off, wgt] : taps) {
        const int yy = y + off.first, xx = x + off.second;
        if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
        field[static_cast<std::size_t>(yy) * width + xx] += wgt;
      }
    }
  const double peak = *std::max_element(field.begin(), field.end());
  if (peak <= 0.0 || p.intensity <= 0.0) return rain;
  const double scale = p.intensity / peak;
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        rain.at(0, ch, y, x) = static_cast<float>(
            std::min(p.intensity, field[static_cast<std::size_t>(y) * width + x] * scale));
  return rain;
}

Image apply_rain(const Image& clean, const Image& rain) {
  require_same_shape(clean, rain, "apply_rain");
  Image out = Image::like(clean);
  for (std::size_t i = 0; i < clean.size(); ++i)
    out.data[i] = std::clamp(clean.data[i] + rain.data[i], 0.f, 1.f);
  return out;
}

Dataset make_dataset(const SceneParams& scene, const RainParams& rain, int n) {
  if (n < 1) throw std::invalid_argument("make_dataset: n must be >= 1");
  scene.validate();
  rain.validate();
  Dataset d{scene, rain, std::vector<PairedSample>(static_cast<std::size_t>(n))};
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    Rng scene_rng(scene.seed + static_cast<std::uint64_t>(i));
    Rng rain_rng(rain.seed + static_cast<std::uint64_t>(i));
    auto [img, labels] = synth_scene(scene, scene_rng);
    auto& s = d.samples[static_cast<std::size_t>(i)];
    s.rain = synth_rain_layer(scene.height, scene.width, rain, rain_rng);
    s.rainy = apply_rain(img, s.rain);
    s.clean = std::move(img);
    s.labels = std::move(labels);
  }
  return d;
}

RainCalibration calibrate_rain(const SceneParams& scene, const RainParams& start, int samples,
                               double target_psnr, double tolerance) {
  if (samples < 1) throw std::invalid_argument("calibrate_rain: samples must be >= 1");
  if (!(tolerance > 0.0)) throw std::invalid_argument("calibrate_rain: tolerance must be > 0");
  const auto measure = [&](double intensity) {
    RainParams r = start;
    r.intensity = intensity;
    const auto d = make_dataset(scene, r, samples);
    RainCalibration c{r};
    for (const auto& s : d.samples) {
      c.psnr += psnr(s.rainy, s.clean);
      c.ssim += ssim(s.rainy, s.clean);
    }
    c.psnr /= samples;
    c.ssim /= samples;
    return c;
  };
  // stronger rain lowers PSNR
  double lo = 1e-3, hi = 1.0;
  auto weak = measure(lo), strong = measure(hi);
  if (target_psnr > weak.psnr || target_psnr < strong.psnr)
    throw std::runtime_error("calibrate_rain: target " + std::to_string(target_psnr) +
                             " dB outside reachable range [" + std::to_string(strong.psnr) + ", " +
                             std::to_string(weak.psnr) + "]");
  RainCalibration best = std::abs(weak.psnr - target_psnr) < std::abs(strong.psnr - target_psnr) ? weak : strong;
  for (int it = 1; it <= 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    auto c = measure(mid);
    c.iterations = it;
    if (std::abs(c.psnr - target_psnr) < std::abs(best.psnr - target_psnr)) best = c;
    if (std::abs(c.psnr - target_psnr) <= tolerance) return c;
    (c.psnr > target_psnr ? lo : hi) = mid;
  }
  return best;
}

std::uint64_t Dataset::hash() const {
  Fnv1a h;
  for (const auto& s : samples) {
    h.update(std::span<const float>(s.clean.data));
    h.update(std::span<const float>(s.rainy.data));
    h.update(std::span<const float>(s.rain.data));
    h.update(std::span<const std::uint8_t>(s.labels.ids));
  }
  return h.digest();
}

namespace {

std::string sample_name(const char* prefix, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%05zu.png", prefix, i);
  return buf;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& d) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const auto& s = d.samples[i];
    write_png(dir / sample_name("clean", i), to_raster(s.clean));
    write_png(dir / sample_name("rainy", i), to_raster(s.rainy));
    write_png(dir / sample_name("rain", i), to_raster(s.rain));
    write_png(dir / sample_name("label", i), label_raster(s.labels));
  }
  std::ofstream m(dir / "manifest.txt");
  if (!m) throw DatasetError((dir / "manifest.txt").string() + ": cannot write manifest");
  m << "format_version=" << kManifestVersion << "\n"
    << "count=" << d.samples.size() << "\n"
    << "scene.height=" << d.scene.height << "\n"
    << "scene.width=" << d.scene.width << "\n"
    << "scene.num_classes=" << d.scene.num_classes << "\n"
    << "scene.shapes_per_image=" << d.scene.shapes_per_image << "\n"
    << "scene.background_noise_amp=" << fmt_double(d.scene.background_noise_amp) << "\n"
    << "scene.seed=" << d.scene.seed << "\n"
    << "rain.density=" << fmt_double(d.rain.density) << "\n"
    << "rain.streak_length=" << d.rain.streak_length << "\n"
    << "rain.angle_low=" << fmt_double(d.rain.angle_low) << "\n"
    << "rain.angle_high=" << fmt_double(d.rain.angle_high) << "\n"
    << "rain.intensity=" << fmt_double(d.rain.intensity) << "\n"
    << "rain.seed=" << d.rain.seed << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.txt";
  std::ifstream in(manifest_path);
  if (!in) throw DatasetError(manifest_path.string() + ": missing manifest");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DatasetError(manifest_path.string() + ": malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw DatasetError(manifest_path.string() + ": missing key " + key);
    return it->second;
  };
  auto as_int = [&](const std::string& key) {
    try {
      return std::stoll(get(key));
    } catch (const std::logic_error&) {
      throw DatasetError(manifest_path.string() + ": bad value for " + key);
    }
  };
  auto as_double = [&](const std::string& key) {
    try {
      return std::stod(get(key));
    } catch (const std::logic_error&) {
      throw DatasetError(manifest_path.string() + ": bad value for " + key);
    }
  };
  if (as_int("format_version") != kManifestVersion)
    throw DatasetError(manifest_path.string() + ": unsupported format_version " +
                       get("format_version"));

  Dataset d;
  d.scene.height = static_cast<int>(as_int("scene.height"));
  d.scene.width = static_cast<int>(as_int("scene.width"));
  d.scene.num_classes = static_cast<int>(as_int("scene.num_classes"));
  d.scene.shapes_per_image = static_cast<int>(as_int("scene.shapes_per_image"));
  d.scene.background_noise_amp = as_double("scene.background_noise_amp");
  d.scene.seed = static_cast<std::uint64_t>(as_int("scene.seed"));
  d.rain.density = as_double("rain.density");
  d.rain.streak_length = static_cast<int>(as_int("rain.streak_length"));
  d.rain.angle_low = as_double("rain.angle_low");
  d.rain.angle_high = as_double("rain.angle_high");
  d.rain.intensity = as_double("rain.intensity");
  d.rain.seed = static_cast<std::uint64_t>(as_int("rain.seed"));
  const auto count = as_int("count");
  if (count < 0) throw DatasetError(manifest_path.string() + ": negative count");

  for (const char* prefix : {"clean", "rainy", "rain", "label"}) {
    for (long long i = 0; i < count; ++i) {
      const auto p = dir / sample_name(prefix, static_cast<std::size_t>(i));
      if (!std::filesystem::exists(p))
        throw DatasetError("count mismatch: manifest declares " + std::to_string(count) +
                           " samples but " + p.string() + " is missing");
    }
    const auto extra = dir / sample_name(prefix, static_cast<std::size_t>(count));
    if (std::filesystem::exists(extra))
      throw DatasetError("count mismatch: manifest declares " + std::to_string(count) +
                         " samples but found extra file " + extra.string());
  }

  d.samples.resize(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    auto& s = d.samples[i];
    auto load_rgb = [&](const char* prefix) {
      const auto p = dir / sample_name(prefix, i);
      auto r = read_png(p);
      if (r.channels != 3 || r.width != d.scene.width || r.height != d.scene.height)
        throw DatasetError(p.string() + ": unexpected raster shape");
      return from_raster(r);
    };
    s.clean = load_rgb("clean");
    s.rainy = load_rgb("rainy");
    s.rain = load_rgb("rain");
    const auto lp = dir / sample_name("label", i);
    auto lr = read_png(lp);
    if (lr.channels != 1 || lr.width != d.scene.width || lr.height != d.scene.height)
      throw DatasetError(lp.string() + ": unexpected label raster shape");
    s.labels = labels_from_raster(lr);
  }
  return d;
}

Image batch_images(const Dataset& d, std::span<const std::size_t> indices,
                   Image PairedSample::*field) {
  std::vector<const Image*> items;
  items.reserve(indices.size());
  for (auto i : indices) items.push_back(&(d.samples.at(i).*field));
  return stack<float>(items);
}

std::vector<LabelMap> batch_labels(const Dataset& d, std::span<const std::size_t> indices) {
  std::vector<LabelMap> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(d.samples.at(i).labels);
  return out;
}

}  // namespace rainshield
