#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rainshield/data_synth.hpp"
#include "rainshield/evalharness.hpp"
#include "rainshield/models.hpp"
#include "rainshield/training.hpp"

namespace rainshield {

/// Bad config file, unknown key, wrong value type or out-of-range value.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Json = nlohmann::ordered_json;

/// Only the output root may come from the environment.
inline constexpr const char* kOutputRootEnv = "RAINSHIELD_OUTPUT_ROOT";

/// Fully materialized defaults; also serves as the schema: every key a config
/// may set exists here with a value of the accepted type.
Json default_config();

/// Recursively overlays `overlay` onto `base`. Keys absent from `base` and
/// type changes are rejected; `where` prefixes error paths.
void merge_config(Json& base, const Json& overlay, const std::string& where = "");

/// `path` is dotted (e.g. "train.at.attack.epsilon"); `value` is parsed as JSON
/// when possible and taken as a string otherwise.
void apply_override(Json& config, std::string_view path, std::string_view value);

Json load_config_file(const std::filesystem::path& path);

/// defaults < file < environment (output root) < overrides.
Json resolve_config(const std::filesystem::path* file, const std::vector<std::string>& overrides,
                    bool use_environment = true);

struct ModelSpec {
  SegDescriptor seg;
  std::uint64_t seg_seed = 1;
  DerainDescriptor derain;
  std::uint64_t derain_seed = 2;
  SegDescriptor alt_seg;
  std::uint64_t alt_seg_seed = 3;
};

struct DataSpec {
  SceneParams scene;
  RainParams rain;
  int train_samples = 2000;
  int val_samples = 100;
  int test_samples = 200;
  /// Scene/rain seed offsets of the validation and test splits.
  std::uint64_t val_seed_offset = 500000;
  std::uint64_t test_seed_offset = 1000000;

  Dataset make_train() const;
  Dataset make_val() const;
  Dataset make_test() const;
};

/// Pipeline names understood by the evaluation.
inline const std::vector<std::string> kPipelineNames{"seg", "robust_seg", "derain_seg", "nat", "pearl", "pearl_ama"};

struct EvalSpec {
  EvalOptions options;
  std::vector<std::string> pipelines;
  /// Pipelines re-evaluated with the alternate seg model.
  std::vector<std::string> cross_model_pipelines;
  std::vector<GridCell> grid;
  bool cross_model = true;
  bool per_class = true;
  int qualitative_samples = 4;
};

struct RunConfig {
  std::string output_root;
  std::string run_name;
  DataSpec data;
  ModelSpec models;
  TrainConfig pretrain_seg;
  TrainConfig pretrain_derain;
  TrainConfig at;
  TrainConfig pearl;
  TrainConfig pearl_ama;
  TrainConfig alt_seg;
  EvalSpec eval;
  int threads = 0;
};

/// Throws ConfigError on any invalid value.
RunConfig parse_run_config(const Json& j);

TrainConfig parse_train_config(const Json& j, const std::string& where);
AttackSpec parse_attack_spec(const Json& j, const std::string& where);

}  // namespace rainshield
