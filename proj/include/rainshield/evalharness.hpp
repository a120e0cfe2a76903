#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rainshield/attacks.hpp"
#include "rainshield/data_synth.hpp"
#include "rainshield/metrics.hpp"
#include "rainshield/pipeline.hpp"

namespace rainshield {

/// One column of the evaluation grid: an attack, or no attack at all.
struct GridCell {
  std::optional<AttackSpec> attack;

  static GridCell none() { return {}; }
  static GridCell with(const AttackSpec& s) { return {s}; }
  std::string name() const { return attack ? attack->name() : "none"; }
  double epsilon() const { return attack ? attack->epsilon : 0.0; }
};

/// {bim3, bim5, bim10, pgd10, cw10} x eps {4/255, 8/255}.
std::vector<GridCell> default_attack_grid();

struct EvalOptions {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  /// Attack gradients flow through the derain stage instead of hitting the seg model on I.
  bool attack_through_derain = false;
  int batch_size = 20;
};

struct MetricsRow {
  std::string pipeline;
  std::string attack;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  double miou = 0.0;
  double macc = 0.0;
  double allacc = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

enum class Metric { miou, macc, allacc, psnr, ssim };
double metric_value(const MetricsRow& r, Metric m);

struct MetricsReport {
  /// Ordered key/value metadata; the "timestamp" key is excluded from determinism checks.
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<MetricsRow> rows;

  std::string meta(const std::string& key) const;
  void set_meta(const std::string& key, const std::string& value);
  /// Mean over seeds of one metric; throws std::out_of_range if the cell is absent.
  double seed_mean(const std::string& pipeline, const std::string& attack, double epsilon, Metric m) const;
  std::vector<std::string> pipelines() const;
  /// Appends another report's rows; metadata of `this` wins.
  void merge(const MetricsReport& other);
};

/// Number of attacked inputs re-checked against the budget during the last call.
struct BudgetAudit {
  std::size_t inputs_checked = 0;
  double max_linf = 0.0;
};

/// Full grid: every pipeline x cell x seed. Attacks target each pipeline's
/// segmentation model on the rainy image; perturbations are shared between
/// pipelines with the same attack target and between seeds for deterministic attacks.
MetricsReport evaluate_defense(std::span<const Pipeline> pipelines, const Dataset& data,
                               std::span<const GridCell> grid, const EvalOptions& opt,
                               BudgetAudit* audit = nullptr);

/// The same grid with each derain model placed in front of an alternate seg model.
/// Pipelines without a derain stage are evaluated as the alternate seg model alone.
MetricsReport cross_model_eval(std::span<const Pipeline> pipelines,
                               std::shared_ptr<const SegNet<float>> alternate_seg, const Dataset& data,
                               std::span<const GridCell> grid, const EvalOptions& opt);

struct PerClassRow {
  int class_id = 0;
  double iou = 0.0;
  double acc = 0.0;
  bool in_gt = false;
  bool in_pred = false;
  bool present() const { return in_gt || in_pred; }
};

struct PerClassReport {
  std::string pipeline;
  std::string attack;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  std::vector<PerClassRow> rows;
  double miou = 0.0;
  double macc = 0.0;
  double allacc = 0.0;
};

PerClassReport per_class_report(const Pipeline& pipeline, const Dataset& data, const GridCell& cell,
                                std::uint64_t seed = 0, const EvalOptions& opt = {});
void write_per_class_csv(const std::filesystem::path& path, std::span<const PerClassReport> reports);

/// Channel-mean |a - b| per pixel, shape [n, 1, H, W].
Image heat_values(const Image& a, const Image& b);
/// Fixed piecewise-linear blue to red map of t in [0, 1].
std::array<std::uint8_t, 3> heat_color(double t);
/// Heat values at or above this map to the top color.
inline constexpr double kHeatVmax = 0.25;

/// Writes per sample: input (rainy + attack), derained, heat map of |derained - C|,
/// colorized gt and prediction. Returns the written paths.
std::vector<std::filesystem::path> qualitative_dump(const Pipeline& pipeline, const Dataset& data,
                                                    std::span<const std::size_t> samples,
                                                    const GridCell& cell, const std::filesystem::path& out_dir,
                                                    std::uint64_t seed = 0);

void write_report_csv(const std::filesystem::path& path, const MetricsReport& report);
std::string report_csv(const MetricsReport& report);
MetricsReport read_report_csv(const std::filesystem::path& path);

/// Aligned text table: one row per pipeline, mIoU / allAcc / PSNR seed means per grid column.
std::string format_summary_table(const MetricsReport& report);

}  // namespace rainshield
