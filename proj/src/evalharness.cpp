#include "rainshield/evalharness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "rainshield/hash.hpp"
#include "rainshield/image_io.hpp"
#include "rainshield/losses.hpp"

namespace rainshield {

std::vector<GridCell> default_attack_grid() {
  std::vector<GridCell> g;
  for (float eps : {4.0f / 255.0f, 8.0f / 255.0f}) {
    g.push_back(GridCell::with(AttackSpec::bim(eps, 3)));
    g.push_back(GridCell::with(AttackSpec::bim(eps, 5)));
    g.push_back(GridCell::with(AttackSpec::bim(eps, 10)));
    g.push_back(GridCell::with(AttackSpec::pgd(eps, 10, 0)));
    g.push_back(GridCell::with(AttackSpec::cw(eps, 10)));
  }
  return g;
}

double metric_value(const MetricsRow& r, Metric m) {
  switch (m) {
    case Metric::miou: return r.miou;
    case Metric::macc: return r.macc;
    case Metric::allacc: return r.allacc;
    case Metric::psnr: return r.psnr;
    case Metric::ssim: return r.ssim;
  }
  return 0.0;
}

std::string MetricsReport::meta(const std::string& key) const {
  for (const auto& [k, v] : metadata)
    if (k == key) return v;
  return {};
}

void MetricsReport::set_meta(const std::string& key, const std::string& value) {
  for (auto& [k, v] : metadata)
    if (k == key) {
      v = value;
      return;
    }
  metadata.emplace_back(key, value);
}

namespace {
bool same_eps(double a, double b) { return std::abs(a - b) <= 1e-6; }
}  // namespace

double MetricsReport::seed_mean(const std::string& pipeline, const std::string& attack, double epsilon,
                                Metric m) const {
  double s = 0.0;
  int n = 0;
  for (const auto& r : rows)
    if (r.pipeline == pipeline && r.attack == attack && same_eps(r.epsilon, epsilon)) {
      s += metric_value(r, m);
      ++n;
    }
  if (n == 0)
    throw std::out_of_range("report has no rows for " + pipeline + " / " + attack + " / eps " +
                            std::to_string(epsilon));
  return s / n;
}

std::vector<std::string> MetricsReport::pipelines() const {
  std::vector<std::string> out;
  for (const auto& r : rows)
    if (std::find(out.begin(), out.end(), r.pipeline) == out.end()) out.push_back(r.pipeline);
  return out;
}

void MetricsReport::merge(const MetricsReport& other) {
  for (const auto& [k, v] : other.metadata)
    if (meta(k).empty()) metadata.emplace_back(k, v);
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
}

namespace {

std::string fmt_eps(double e) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.8g", e);
  return buf;
}

std::string timestamp_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<std::vector<std::size_t>> eval_batches(std::size_t n, int batch) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch)) {
    out.emplace_back();
    for (std::size_t k = i; k < std::min(n, i + static_cast<std::size_t>(batch)); ++k) out.back().push_back(k);
  }
  return out;
}

void check_classes(const Pipeline& p, const Dataset& d) {
  if (p.seg().num_classes() != d.scene.num_classes)
    throw std::invalid_argument("pipeline '" + p.name() + "' predicts " +
                                std::to_string(p.seg().num_classes()) + " classes, dataset has " +
                                std::to_string(d.scene.num_classes));
}

AttackSpec seeded(const AttackSpec& s, std::uint64_t seed) {
  AttackSpec out = s;
  out.seed = s.seed ^ (0x9e3779b97f4a7c15ull * (seed + 1));
  return out;
}

// Per-batch perturbations for the whole dataset against one attack target.
std::vector<Image> make_deltas(const AttackTarget& target, const Dataset& data, const AttackSpec& spec,
                               const std::vector<std::vector<std::size_t>>& batches, BudgetAudit* audit) {
  std::vector<Image> out;
  out.reserve(batches.size());
  for (const auto& b : batches) {
    const Image x = batch_images(data, b, &PairedSample::rainy);
    const auto y = batch_labels(data, b);
    Image d = naa_generate(target, x, y, spec);
    // post-hoc budget audit, machine exact
    for (std::size_t i = 0; i < d.size(); ++i) {
      const float adv = x.data[i] + d.data[i];
      const double diff = std::abs(static_cast<double>(adv) - static_cast<double>(x.data[i]));
      if (!(diff <= spec.epsilon) || !(adv >= 0.0f && adv <= 1.0f))
        throw std::logic_error("budget audit failed: attacked input leaves the eps ball or the box");
      if (audit) audit->max_linf = std::max(audit->max_linf, diff);
    }
    if (audit) audit->inputs_checked += static_cast<std::size_t>(x.n);
    out.push_back(std::move(d));
  }
  return out;
}

struct CellResult {
  ConfusionMatrix cm;
  double psnr_sum = 0.0;
  double ssim_sum = 0.0;
  std::size_t n = 0;
};

CellResult run_pipeline(const Pipeline& p, const Dataset& data,
                        const std::vector<std::vector<std::size_t>>& batches,
                        const std::vector<Image>* deltas) {
  CellResult r{ConfusionMatrix(p.seg().num_classes())};
  for (std::size_t b = 0; b < batches.size(); ++b) {
    Image x = batch_images(data, batches[b], &PairedSample::rainy);
    if (deltas) x = perturb(x, (*deltas)[b]);
    const Image c = batch_images(data, batches[b], &PairedSample::clean);
    const auto y = batch_labels(data, batches[b]);
    const Image restored = p.restore(x);
    for (double v : psnr_per_sample(restored, c)) r.psnr_sum += v;
    for (double v : ssim_per_sample(restored, c)) r.ssim_sum += v;
    const auto pred = argmax_labels(p.seg().forward(restored));
    for (std::size_t k = 0; k < pred.size(); ++k) r.cm.accumulate(pred[k], y[k]);
    r.n += pred.size();
  }
  return r;
}

std::string target_key(const Pipeline& p, bool through) {
  std::ostringstream s;
  s << p.seg().param_hash() << ':' << p.seg().descriptor().str();
  if (through && p.derain()) s << '|' << p.derain()->param_hash();
  return s.str();
}

}  // namespace

MetricsReport evaluate_defense(std::span<const Pipeline> pipelines, const Dataset& data,
                               std::span<const GridCell> grid, const EvalOptions& opt, BudgetAudit* audit) {
  if (data.size() == 0) throw std::invalid_argument("evaluate_defense: empty dataset");
  if (pipelines.empty()) throw std::invalid_argument("evaluate_defense: no pipelines");
  if (opt.seeds.empty()) throw std::invalid_argument("evaluate_defense: no seeds");
  if (opt.batch_size < 1) throw std::invalid_argument("evaluate_defense: batch_size must be >= 1");
  for (const auto& p : pipelines) check_classes(p, data);
  for (const auto& c : grid)
    if (c.attack) c.attack->validate();
  if (audit) *audit = {};

  MetricsReport rep;
  rep.set_meta("format_version", "1");
  rep.set_meta("dataset_hash", Fnv1a::to_hex(data.hash()));
  rep.set_meta("samples", std::to_string(data.size()));
  rep.set_meta("miou_convention", kMiouConvention);
  rep.set_meta("macc_convention", kMaccConvention);
  rep.set_meta("psnr_cap_db", "100");
  rep.set_meta("attack_target", opt.attack_through_derain ? "derain_then_seg_on_rainy" : "seg_on_rainy");
  rep.set_meta("psnr_without_derain", "PSNR/SSIM of the attacked rainy input against the clean image");
  rep.set_meta("robust_seg_training_input", "clean");
  rep.set_meta("timestamp", timestamp_now());

  const auto batches = eval_batches(data.size(), opt.batch_size);
  const std::size_t np = pipelines.size(), nc = grid.size(), ns = opt.seeds.size();
  std::vector<MetricsRow> table(np * nc * ns);

  for (std::size_t ci = 0; ci < nc; ++ci) {
    const auto& cell = grid[ci];
    std::map<std::string, std::vector<Image>> cache;
    // cells without a random start do not depend on the seed
    const bool seeded_cell = cell.attack && cell.attack->normalized().uses_seed();
    for (std::size_t si = 0; si < ns; ++si) {
      const std::uint64_t seed = opt.seeds[si];
      for (std::size_t pi = 0; pi < np; ++pi) {
        const auto& p = pipelines[pi];
        if (si > 0 && !seeded_cell) {
          auto row = table[(pi * nc + ci) * ns];
          row.seed = seed;
          table[(pi * nc + ci) * ns + si] = row;
          continue;
        }
        const std::vector<Image>* deltas = nullptr;
        if (cell.attack) {
          const AttackSpec spec = seeded(*cell.attack, seed);
          const bool through = opt.attack_through_derain && p.has_derain();
          std::string key = target_key(p, through);
          if (spec.uses_seed()) key += "#" + std::to_string(seed);
          auto it = cache.find(key);
          if (it == cache.end()) {
            std::vector<Image> d;
            if (through) {
              d = make_deltas(DerainSegTarget(*p.derain(), p.seg()), data, spec, batches, audit);
            } else {
              d = make_deltas(SegTarget(p.seg()), data, spec, batches, audit);
            }
            it = cache.emplace(key, std::move(d)).first;
          }
          deltas = &it->second;
        }
        const auto r = run_pipeline(p, data, batches, deltas);
        auto& row = table[(pi * nc + ci) * ns + si];
        row.pipeline = p.name();
        row.attack = cell.name();
        row.epsilon = cell.epsilon();
        row.seed = seed;
        row.miou = miou(r.cm);
        row.macc = macc(r.cm);
        row.allacc = allacc(r.cm);
        row.psnr = r.psnr_sum / static_cast<double>(r.n);
        row.ssim = r.ssim_sum / static_cast<double>(r.n);
      }
    }
  }
  rep.rows = std::move(table);
  return rep;
}

MetricsReport cross_model_eval(std::span<const Pipeline> pipelines,
                               std::shared_ptr<const SegNet<float>> alternate_seg, const Dataset& data,
                               std::span<const GridCell> grid, const EvalOptions& opt) {
  if (!alternate_seg) throw std::invalid_argument("cross_model_eval: missing alternate seg model");
  std::vector<Pipeline> moved;
  for (const auto& p : pipelines) {
    if (p.has_derain() && alternate_seg->descriptor().in_channels != 3)
      throw std::invalid_argument("cross_model_eval: alternate seg does not take 3-channel input");
    moved.emplace_back(p.name(), alternate_seg, p.derain_ptr());
  }
  auto rep = evaluate_defense(moved, data, grid, opt);
  rep.set_meta("seg_model", alternate_seg->descriptor().str() + "@" + Fnv1a::to_hex(alternate_seg->param_hash()));
  rep.set_meta("protocol", "cross_model");
  return rep;
}

PerClassReport per_class_report(const Pipeline& pipeline, const Dataset& data, const GridCell& cell,
                                std::uint64_t seed, const EvalOptions& opt) {
  if (data.size() == 0) throw std::invalid_argument("per_class_report: empty dataset");
  check_classes(pipeline, data);
  const auto batches = eval_batches(data.size(), opt.batch_size);
  std::vector<Image> deltas;
  if (cell.attack) {
    const AttackSpec spec = seeded(*cell.attack, seed);
    if (opt.attack_through_derain && pipeline.has_derain())
      deltas = make_deltas(DerainSegTarget(*pipeline.derain(), pipeline.seg()), data, spec, batches, nullptr);
    else
      deltas = make_deltas(SegTarget(pipeline.seg()), data, spec, batches, nullptr);
  }
  const auto r = run_pipeline(pipeline, data, batches, cell.attack ? &deltas : nullptr);
  PerClassReport out;
  out.pipeline = pipeline.name();
  out.attack = cell.name();
  out.epsilon = cell.epsilon();
  out.seed = seed;
  for (const auto& s : per_class(r.cm)) out.rows.push_back({s.class_id, s.iou, s.acc, s.in_gt, s.in_pred});
  out.miou = miou(r.cm);
  out.macc = macc(r.cm);
  out.allacc = allacc(r.cm);
  return out;
}

void write_per_class_csv(const std::filesystem::path& path, std::span<const PerClassReport> reports) {
  std::ofstream out(path);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out << "# miou_convention=" << kMiouConvention << "\n";
  out << "pipeline,attack,epsilon,seed,class,IoU,Acc,in_gt,in_pred,included\n";
  char buf[64];
  for (const auto& r : reports)
    for (const auto& c : r.rows) {
      out << r.pipeline << ',' << r.attack << ',' << fmt_eps(r.epsilon) << ',' << r.seed << ',' << c.class_id;
      std::snprintf(buf, sizeof buf, ",%.6f,%.6f", c.iou, c.acc);
      out << buf << ',' << c.in_gt << ',' << c.in_pred << ',' << c.present() << '\n';
    }
  if (!out) throw IoError(path.string() + ": write failed");
}

Image heat_values(const Image& a, const Image& b) {
  require_same_shape(a, b, "heat_values");
  Image out(a.n, 1, a.h, a.w);
  const std::size_t plane = a.plane();
  for (int i = 0; i < a.n; ++i)
    for (std::size_t p = 0; p < plane; ++p) {
      double s = 0.0;
      for (int c = 0; c < a.c; ++c) {
        const std::size_t k = static_cast<std::size_t>(c) * plane + p;
        s += std::abs(static_cast<double>(a.sample(i)[k]) - static_cast<double>(b.sample(i)[k]));
      }
      out.sample(i)[p] = static_cast<float>(s / a.c);
    }
  return out;
}

std::array<std::uint8_t, 3> heat_color(double t) {
  static constexpr double stops[][4] = {
      {0.00, 0, 0, 96}, {0.30, 0, 96, 255}, {0.60, 255, 224, 0}, {1.00, 208, 0, 0}};
  t = std::clamp(std::isfinite(t) ? t : 1.0, 0.0, 1.0);
  std::size_t k = 0;
  while (k + 2 < std::size(stops) && t > stops[k + 1][0]) ++k;
  const double u = (t - stops[k][0]) / (stops[k + 1][0] - stops[k][0]);
  std::array<std::uint8_t, 3> c{};
  for (int j = 0; j < 3; ++j)
    c[static_cast<std::size_t>(j)] =
        static_cast<std::uint8_t>(std::lround(stops[k][j + 1] + u * (stops[k + 1][j + 1] - stops[k][j + 1])));
  return c;
}

namespace {

Raster heat_raster(const Image& heat, int sample) {
  Raster r{heat.w, heat.h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(heat.w) * heat.h * 3)};
  for (std::size_t p = 0; p < heat.plane(); ++p) {
    const auto c = heat_color(heat.sample(sample)[p] / kHeatVmax);
    std::copy(c.begin(), c.end(), r.pixels.begin() + static_cast<std::ptrdiff_t>(3 * p));
  }
  return r;
}

Raster color_labels(const LabelMap& m) {
  Raster r{m.w, m.h, 3, std::vector<std::uint8_t>(m.size() * 3)};
  for (std::size_t p = 0; p < m.size(); ++p) {
    const auto c = class_color(m.ids[p]);
    std::copy(c.begin(), c.end(), r.pixels.begin() + static_cast<std::ptrdiff_t>(3 * p));
  }
  return r;
}

}  // namespace

std::vector<std::filesystem::path> qualitative_dump(const Pipeline& pipeline, const Dataset& data,
                                                    std::span<const std::size_t> samples,
                                                    const GridCell& cell, const std::filesystem::path& out_dir,
                                                    std::uint64_t seed) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError(out_dir.string() + ": cannot create directory: " + ec.message());
  std::vector<std::filesystem::path> written;
  if (samples.empty()) return written;
  for (auto i : samples)
    if (i >= data.size()) throw std::out_of_range("qualitative_dump: sample index " + std::to_string(i));
  Image x = batch_images(data, samples, &PairedSample::rainy);
  const Image c = batch_images(data, samples, &PairedSample::clean);
  const auto y = batch_labels(data, samples);
  if (cell.attack) {
    const AttackSpec spec = seeded(*cell.attack, seed);
    x = perturb(x, naa_generate(SegTarget(pipeline.seg()), x, y, spec));
  }
  const Image restored = pipeline.restore(x);
  const Image heat = heat_values(restored, c);
  const auto pred = argmax_labels(pipeline.seg().forward(restored));
  const std::string stem =
      pipeline.name() + "_" + cell.name() + "_eps" + std::to_string(std::lround(cell.epsilon() * 255.0));
  for (std::size_t k = 0; k < samples.size(); ++k) {
    char idx[16];
    std::snprintf(idx, sizeof idx, "%05zu", samples[k]);
    const auto base = out_dir / (stem + "_" + idx);
    const int s = static_cast<int>(k);
    const std::pair<std::string, Raster> files[] = {
        {"_input.png", to_raster(x, s)},
        {"_derained.png", to_raster(restored, s)},
        {"_heat.png", heat_raster(heat, s)},
        {"_gt.png", color_labels(y[k])},
        {"_pred.png", color_labels(pred[k])},
    };
    for (const auto& [suffix, raster] : files) {
      const auto path = base.string() + suffix;
      write_png(path, raster);
      written.emplace_back(path);
    }
  }
  return written;
}

std::string report_csv(const MetricsReport& report) {
  std::ostringstream out;
  for (const auto& [k, v] : report.metadata) out << "# " << k << '=' << v << '\n';
  out << "pipeline,attack,epsilon,seed,mIoU,mAcc,allAcc,PSNR,SSIM\n";
  char buf[160];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%.4f,%.6f", r.miou, r.macc, r.allacc, r.psnr, r.ssim);
    out << r.pipeline << ',' << r.attack << ',' << fmt_eps(r.epsilon) << ',' << r.seed << buf << '\n';
  }
  return out.str();
}

void write_report_csv(const std::filesystem::path& path, const MetricsReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out << report_csv(report);
  if (!out) throw IoError(path.string() + ": write failed");
}

MetricsReport read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string() + ": cannot open");
  MetricsReport rep;
  std::string line;
  bool header = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) rep.metadata.emplace_back(line.substr(2, eq - 2), line.substr(eq + 1));
      continue;
    }
    if (!header) {
      if (line != "pipeline,attack,epsilon,seed,mIoU,mAcc,allAcc,PSNR,SSIM")
        throw IoError(path.string() + ": unexpected CSV header '" + line + "'");
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (f.size() != 9) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 9 fields");
    try {
      rep.rows.push_back({f[0], f[1], std::stod(f[2]), std::stoull(f[3]), std::stod(f[4]), std::stod(f[5]),
                          std::stod(f[6]), std::stod(f[7]), std::stod(f[8])});
    } catch (const std::exception&) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  if (!header) throw IoError(path.string() + ": missing CSV header");
  return rep;
}

std::string format_summary_table(const MetricsReport& report) {
  std::vector<std::pair<std::string, double>> cells;
  for (const auto& r : report.rows) {
    const bool seen = std::any_of(cells.begin(), cells.end(), [&](const auto& c) {
      return c.first == r.attack && same_eps(c.second, r.epsilon);
    });
    if (!seen) cells.emplace_back(r.attack, r.epsilon);
  }
  const auto pipes = report.pipelines();
  std::size_t name_w = 8;
  for (const auto& p : pipes) name_w = std::max(name_w, p.size());

  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(name_w)) << "method";
  for (const auto& [a, e] : cells) {
    std::ostringstream h;
    h << a;
    if (e > 0) h << "@" << std::lround(e * 255.0) << "/255";
    out << " | " << std::setw(22) << h.str();
  }
  out << '\n' << std::setw(static_cast<int>(name_w)) << "";
  for (std::size_t i = 0; i < cells.size(); ++i) out << " | " << std::setw(22) << "mIoU  allAcc  PSNR";
  out << '\n';
  for (const auto& p : pipes) {
    out << std::setw(static_cast<int>(name_w)) << p;
    for (const auto& [a, e] : cells) {
      char buf[64];
      try {
        std::snprintf(buf, sizeof buf, "%5.2f  %6.2f  %5.2f", 100 * report.seed_mean(p, a, e, Metric::miou),
                      100 * report.seed_mean(p, a, e, Metric::allacc), report.seed_mean(p, a, e, Metric::psnr));
      } catch (const std::out_of_range&) {
        std::snprintf(buf, sizeof buf, "%s", "-");
      }
      out << " | " << std::setw(22) << buf;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace rainshield
