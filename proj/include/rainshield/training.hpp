#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rainshield/attacks.hpp"
#include "rainshield/data_synth.hpp"
#include "rainshield/losses.hpp"
#include "rainshield/models.hpp"
#include "rainshield/optim.hpp"
#include "rainshield/pipeline.hpp"

namespace rainshield {

/// Non-finite loss during training.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A model that must stay fixed changed during training.
class FrozenModelError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class SegInput { clean, rainy };
enum class LrSchedule { constant, cosine };

struct TrainConfig {
  int epochs = 1;
  int batch_size = 16;
  OptimizerParams optimizer;
  LrSchedule lr_schedule = LrSchedule::constant;
  AttackSpec train_attack = AttackSpec::bim(8.0f / 255.0f, 5);
  DefenseLoss defense_loss;
  /// Images the segmentation regimes train on.
  SegInput seg_input = SegInput::clean;
  bool ama_enabled = false;
  AmaVariant ama_variant = AmaVariant::independent_descent;
  /// Budget of the mirror perturbation; unset reuses the training attack's eps.
  std::optional<float> ama_epsilon;
  std::uint64_t seed = 1;
  /// Validation samples used for per-epoch metrics and best-epoch selection (0 = all).
  int validation_samples = 0;
  /// Keep the parameters of the best validation epoch instead of the last.
  bool select_best = true;
  /// Record a parameter hash after every optimizer step.
  bool trace_updates = false;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  /// Validation metrics; NaN when no validation set was given.
  double val_psnr = std::numeric_limits<double>::quiet_NaN();
  double val_miou = std::numeric_limits<double>::quiet_NaN();
  double val_allacc = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  std::size_t batches = 0;
  std::size_t attack_calls = 0;
  std::size_t ama_calls = 0;
  std::size_t optimizer_param_count = 0;
  double last_grad_norm = 0.0;
  std::vector<std::uint64_t> step_hashes;
};

struct TrainHooks {
  const Dataset* validation = nullptr;
  /// Called after each epoch with the current (not best-selected) parameters.
  std::function<void(const EpochRecord&, std::span<const float> params)> on_epoch;
};

TrainResult pretrain_seg(SegNet<float>& model, const Dataset& data, const TrainConfig& cfg,
                         const TrainHooks& hooks = {});
TrainResult pretrain_derain(DerainNet<float>& model, const Dataset& data, const TrainConfig& cfg,
                            const TrainHooks& hooks = {});
/// Adversarial training: each batch is attacked against the current weights.
TrainResult train_at(SegNet<float>& model, const Dataset& data, const TrainConfig& cfg,
                     const TrainHooks& hooks = {});
/// Derain model trained to map attacked rainy inputs to clean images; the
/// attack targets the frozen segmentation model.
TrainResult train_pearl(DerainNet<float>& derain, const SegNet<float>& seg_frozen, const Dataset& data,
                        const TrainConfig& cfg, const TrainHooks& hooks = {});
/// As train_pearl, with the target shifted to clip(C + delta_m).
TrainResult train_pearl_ama(DerainNet<float>& derain, const SegNet<float>& seg_frozen,
                            const Dataset& data, const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Pretrained derain in front of an adversarially trained seg model. No training.
Pipeline assemble_nat(std::shared_ptr<const DerainNet<float>> derain,
                      std::shared_ptr<const SegNet<float>> robust_seg);

}  // namespace rainshield
