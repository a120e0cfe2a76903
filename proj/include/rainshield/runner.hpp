#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rainshield/config.hpp"
#include "rainshield/evalharness.hpp"

namespace rainshield {

/// A checkpoint, dataset, or report a command depends on does not exist.
class MissingArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A command would overwrite outputs of an earlier run without --overwrite.
class RunDirConflict : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitMissingArtifact = 3,
  kExitDivergence = 4,
  kExitRunDirConflict = 5,
};

/// Maps an in-flight exception to an exit code and a one-line
/// `error code=<n> kind=<kind> message="<text>"` description.
std::pair<int, std::string> classify_error(const std::exception& e);

enum class Regime { at, nat, pearl, pearl_ama };
Regime parse_regime(std::string_view s);
std::string_view to_string(Regime r);

/// Fixed artifact locations inside a run directory.
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path snapshot() const { return root / "config.snapshot"; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path metrics() const { return root / "metrics"; }
  std::filesystem::path images() const { return root / "images"; }
  std::filesystem::path logs() const { return root / "logs"; }
  std::filesystem::path data(const std::string& split) const { return root / "data" / split; }
  std::filesystem::path checkpoint(const std::string& name) const { return checkpoints() / (name + ".ckpt"); }
  std::filesystem::path eval_csv() const { return metrics() / "eval.csv"; }
  std::filesystem::path cross_csv() const { return metrics() / "eval_cross_model.csv"; }
};

class Run {
 public:
  /// Creates the layout and snapshots `config` before any work; an existing
  /// snapshot must match unless `overwrite` is set. The run directory is
  /// `run_dir` when given, else <output_root>/<run_name>.
  static Run open(const Json& config, const std::optional<std::filesystem::path>& run_dir, bool overwrite);

  const Json& config() const { return config_; }
  const RunConfig& rc() const { return rc_; }
  const RunLayout& layout() const { return layout_; }
  bool overwrite() const { return overwrite_; }

  /// Appends to logs/<log_name>.log and echoes to stderr unless quiet.
  void log(const std::string& line) const;
  void set_log_name(std::string name) { log_name_ = std::move(name); }
  void set_quiet(bool q) { quiet_ = q; }

  /// Throws RunDirConflict if `path` exists and overwrite is off.
  void claim(const std::filesystem::path& path) const;
  /// Throws MissingArtifactError naming the producing command.
  void require(const std::filesystem::path& path, const std::string& produced_by) const;

  Dataset load_split(const std::string& split) const;

 private:
  Json config_;
  RunConfig rc_;
  RunLayout layout_;
  bool overwrite_ = false;
  bool quiet_ = false;
  std::string log_name_ = "run";
};

void cmd_synth(Run& run);
/// kind: seg, derain, or alt-seg (independently trained seg for cross-model evaluation).
void cmd_pretrain(Run& run, const std::string& kind);
void cmd_train(Run& run, Regime regime);
MetricsReport cmd_eval(Run& run);
/// Merges metrics/eval.csv of each run dir into out_dir: merged CSV, summary
/// table, and metric-vs-strength plots. Returns the merged report.
MetricsReport cmd_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_dir,
                         bool overwrite);
/// Attacks one image against the pretrained seg model and writes delta_n,
/// delta_m, sign maps, and the attacked image. `image` defaults to test sample `sample`.
std::vector<std::filesystem::path> cmd_attack_demo(Run& run, const std::optional<std::filesystem::path>& image,
                                                   std::size_t sample);
RainCalibration cmd_calibrate_rain(Run& run, int samples, double target_psnr);
/// synth, pretrain seg/derain, at, nat, pearl, pearl-ama, alt-seg, eval, report.
void cmd_all(Run& run);

/// The six pipelines built from a run's checkpoints, in report order.
std::vector<Pipeline> load_pipelines(const Run& run, const std::vector<std::string>& names);

}  // namespace rainshield
