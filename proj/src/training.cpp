#include "rainshield/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "rainshield/hash.hpp"
#include "rainshield/metrics.hpp"

namespace rainshield {

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (!(optimizer.learning_rate >= 0.0)) throw std::invalid_argument("train: learning_rate must be >= 0");
  if (validation_samples < 0) throw std::invalid_argument("train: validation_samples must be >= 0");
  train_attack.validate();
  if (ama_epsilon && !(*ama_epsilon >= 0.0f && *ama_epsilon <= 1.0f))
    throw std::invalid_argument("train: ama_epsilon must lie in [0, 1]");
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch, std::mt19937_64& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch))
    out.emplace_back(perm.begin() + i, perm.begin() + std::min(n, i + static_cast<std::size_t>(batch)));
  return out;
}

void check_finite(double loss, const char* regime, int epoch, std::size_t batch) {
  if (!std::isfinite(loss))
    throw DivergenceError(std::string(regime) + ": non-finite loss " + std::to_string(loss) +
                          " at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch));
}

double grad_norm(std::span<const float> g) {
  double s = 0.0;
  for (float v : g) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

void apply_schedule(Optimizer& opt, const TrainConfig& cfg, std::size_t step, std::size_t total) {
  if (cfg.lr_schedule == LrSchedule::constant || total == 0) return;
  const double t = static_cast<double>(step) / static_cast<double>(total);
  opt.set_learning_rate(cfg.optimizer.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
}

std::vector<std::size_t> validation_indices(const Dataset& v, int limit) {
  const std::size_t n = limit > 0 ? std::min<std::size_t>(v.size(), static_cast<std::size_t>(limit)) : v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

constexpr int kEvalBatch = 20;

// Clean or attacked segmentation metrics of `seg` on the validation set.
void validate_seg(const SegNet<float>& seg, const Dataset& v, const TrainConfig& cfg, bool attacked,
                  EpochRecord& rec) {
  const auto idx = validation_indices(v, cfg.validation_samples);
  ConfusionMatrix cm(seg.num_classes());
  const SegTarget target(seg);
  auto field = cfg.seg_input == SegInput::clean ? &PairedSample::clean : &PairedSample::rainy;
  for (std::size_t i = 0; i < idx.size(); i += kEvalBatch) {
    const std::span<const std::size_t> b(idx.data() + i, std::min<std::size_t>(kEvalBatch, idx.size() - i));
    Image x = batch_images(v, b, field);
    const auto y = batch_labels(v, b);
    if (attacked) x = perturb(x, naa_generate(target, x, y, cfg.train_attack));
    const auto pred = argmax_labels(seg.forward(x));
    for (std::size_t k = 0; k < pred.size(); ++k) cm.accumulate(pred[k], y[k]);
  }
  rec.val_miou = miou(cm);
  rec.val_allacc = allacc(cm);
}

// PSNR of the derain output against C on (optionally attacked) rainy inputs,
// plus segmentation metrics of the frozen model on the restored images.
void validate_derain(const DerainNet<float>& derain, const SegNet<float>* seg, const Dataset& v,
                     const TrainConfig& cfg, bool attacked, EpochRecord& rec) {
  const auto idx = validation_indices(v, cfg.validation_samples);
  double psnr_sum = 0.0;
  std::unique_ptr<ConfusionMatrix> cm;
  if (seg) cm = std::make_unique<ConfusionMatrix>(seg->num_classes());
  for (std::size_t i = 0; i < idx.size(); i += kEvalBatch) {
    const std::span<const std::size_t> b(idx.data() + i, std::min<std::size_t>(kEvalBatch, idx.size() - i));
    Image x = batch_images(v, b, &PairedSample::rainy);
    const Image c = batch_images(v, b, &PairedSample::clean);
    const auto y = batch_labels(v, b);
    if (attacked && seg) x = perturb(x, naa_generate(SegTarget(*seg), x, y, cfg.train_attack));
    const Image out = derain.forward(x);
    for (double p : psnr_per_sample(out, c)) psnr_sum += p;
    if (seg) {
      const auto pred = argmax_labels(seg->forward(out));
      for (std::size_t k = 0; k < pred.size(); ++k) cm->accumulate(pred[k], y[k]);
    }
  }
  rec.val_psnr = psnr_sum / static_cast<double>(idx.size());
  if (cm) {
    rec.val_miou = miou(*cm);
    rec.val_allacc = allacc(*cm);
  }
}

// Keeps a copy of the parameters with the best validation score.
class BestKeeper {
 public:
  BestKeeper(bool enabled, std::span<const float> params) : enabled_(enabled) {
    if (enabled_) best_.assign(params.begin(), params.end());
  }
  void offer(int epoch, double score, std::span<const float> params) {
    if (!std::isfinite(score)) return;
    if (best_epoch_ < 0 || score > best_score_) {
      best_epoch_ = epoch;
      best_score_ = score;
      if (enabled_) best_.assign(params.begin(), params.end());
    }
  }
  int best_epoch(int last_epoch) const { return best_epoch_ >= 0 ? best_epoch_ : last_epoch; }
  void restore(std::span<float> params) const {
    if (enabled_ && best_epoch_ >= 0) std::copy(best_.begin(), best_.end(), params.begin());
  }

 private:
  bool enabled_;
  int best_epoch_ = -1;
  double best_score_ = 0.0;
  std::vector<float> best_;
};

TrainResult seg_loop(SegNet<float>& model, const Dataset& data, const TrainConfig& cfg,
                     const TrainHooks& hooks, bool adversarial, const char* regime) {
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument(std::string(regime) + ": empty dataset");
  TrainResult res;
  auto opt = make_optimizer(cfg.optimizer, model.params());
  res.optimizer_param_count = opt->bound_param_count();
  std::vector<float> grads(model.param_count());
  std::mt19937_64 shuffle_rng(cfg.seed);
  std::mt19937_64 attack_rng(cfg.seed ^ 0xa77ac4ull);
  const auto field = cfg.seg_input == SegInput::clean ? &PairedSample::clean : &PairedSample::rainy;
  const bool validating = hooks.validation != nullptr && hooks.validation->size() > 0;
  BestKeeper best(validating && cfg.select_best, model.params());
  const std::size_t per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * static_cast<std::size_t>(cfg.epochs);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    double loss_sum = 0.0;
    std::size_t seen = 0;
    const auto batches = epoch_batches(data.size(), cfg.batch_size, shuffle_rng);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      Image x = batch_images(data, batches[b], field);
      const auto y = batch_labels(data, batches[b]);
      if (adversarial) {
        AttackSpec spec = cfg.train_attack;
        spec.seed = attack_rng();
        x = perturb(x, naa_generate(SegTarget(model), x, y, spec));
        ++res.attack_calls;
      }
      SegNet<float>::Cache cache;
      const Image logits = model.forward(x, cache);
      Image dlogits;
      const auto per = cross_entropy(logits, y, &dlogits, 1.0 / x.n);
      const double loss = std::accumulate(per.begin(), per.end(), 0.0) / x.n;
      check_finite(loss, regime, epoch, b);
      std::fill(grads.begin(), grads.end(), 0.0f);
      model.backward(cache, dlogits, nullptr, grads);
      apply_schedule(*opt, cfg, res.batches, total);
      opt->step(grads);
      res.last_grad_norm = grad_norm(grads);
      if (cfg.trace_updates) res.step_hashes.push_back(model.param_hash());
      loss_sum += loss * x.n;
      seen += static_cast<std::size_t>(x.n);
      ++res.batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(seen);
    if (validating) {
      validate_seg(model, *hooks.validation, cfg, adversarial, rec);
      best.offer(epoch, rec.val_allacc, model.params());
    }
    rec.seconds = elapsed(t0);
    res.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec, model.params());
  }
  best.restore(model.params());
  res.best_epoch = cfg.epochs > 0 ? best.best_epoch(cfg.epochs - 1) : -1;
  return res;
}

enum class DerainRegime { pretrain, pearl, pearl_ama };

TrainResult derain_loop(DerainNet<float>& model, const SegNet<float>* seg, const Dataset& data,
                        const TrainConfig& cfg, const TrainHooks& hooks, DerainRegime regime,
                        const char* name) {
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument(std::string(name) + ": empty dataset");
  TrainResult res;
  auto opt = make_optimizer(cfg.optimizer, model.params());
  res.optimizer_param_count = opt->bound_param_count();
  std::vector<float> grads(model.param_count());
  std::mt19937_64 shuffle_rng(cfg.seed);
  std::mt19937_64 attack_rng(cfg.seed ^ 0xa77ac4ull);
  const bool attacked = regime != DerainRegime::pretrain;
  const bool validating = hooks.validation != nullptr && hooks.validation->size() > 0;
  BestKeeper best(validating && cfg.select_best, model.params());
  const std::uint64_t seg_hash = seg ? seg->param_hash() : 0;
  AttackSpec ama_spec = cfg.train_attack;
  if (cfg.ama_epsilon) {
    ama_spec.epsilon = *cfg.ama_epsilon;
    ama_spec.alpha = 0.0f;
  }
  const std::size_t per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * static_cast<std::size_t>(cfg.epochs);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    double loss_sum = 0.0;
    std::size_t seen = 0;
    const auto batches = epoch_batches(data.size(), cfg.batch_size, shuffle_rng);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      Image x = batch_images(data, batches[b], &PairedSample::rainy);
      Image target = batch_images(data, batches[b], &PairedSample::clean);
      const auto y = batch_labels(data, batches[b]);
      NaaTrace trace;
      if (attacked) {
        AttackSpec spec = cfg.train_attack;
        spec.seed = attack_rng();
        const SegTarget t(*seg);
        x = perturb(x, naa_generate(t, x, y, spec, regime == DerainRegime::pearl_ama ? &trace : nullptr));
        ++res.attack_calls;
        if (regime == DerainRegime::pearl_ama) {
          AttackSpec ms = ama_spec;
          ms.seed = spec.seed;
          const Image dm = ama_generate(t, target, y, ms, cfg.ama_variant, &trace);
          ++res.ama_calls;
          for (std::size_t i = 0; i < target.size(); ++i)
            target.data[i] = std::clamp(target.data[i] + dm.data[i], 0.0f, 1.0f);
        }
      }
      DerainNet<float>::Cache cache;
      const Image out = model.forward(x, cache);
      Image dout;
      const double loss = cfg.defense_loss(out, target, &dout);
      check_finite(loss, name, epoch, b);
      std::fill(grads.begin(), grads.end(), 0.0f);
      model.backward(cache, dout, nullptr, grads);
      apply_schedule(*opt, cfg, res.batches, total);
      opt->step(grads);
      res.last_grad_norm = grad_norm(grads);
      if (cfg.trace_updates) res.step_hashes.push_back(model.param_hash());
      loss_sum += loss * x.n;
      seen += static_cast<std::size_t>(x.n);
      ++res.batches;
    }
    if (seg && seg->param_hash() != seg_hash)
      throw FrozenModelError(std::string(name) + ": segmentation parameters changed during epoch " +
                             std::to_string(epoch));
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(seen);
    if (validating) {
      validate_derain(model, seg, *hooks.validation, cfg, attacked, rec);
      best.offer(epoch, rec.val_psnr, model.params());
    }
    rec.seconds = elapsed(t0);
    res.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec, model.params());
  }
  best.restore(model.params());
  res.best_epoch = cfg.epochs > 0 ? best.best_epoch(cfg.epochs - 1) : -1;
  return res;
}

}  // namespace

TrainResult pretrain_seg(SegNet<float>& model, const Dataset& data, const TrainConfig& cfg,
                         const TrainHooks& hooks) {
  return seg_loop(model, data, cfg, hooks, false, "pretrain_seg");
}

TrainResult train_at(SegNet<float>& model, const Dataset& data, const TrainConfig& cfg,
                     const TrainHooks& hooks) {
  return seg_loop(model, data, cfg, hooks, true, "train_at");
}

TrainResult pretrain_derain(DerainNet<float>& model, const Dataset& data, const TrainConfig& cfg,
                            const TrainHooks& hooks) {
  return derain_loop(model, nullptr, data, cfg, hooks, DerainRegime::pretrain, "pretrain_derain");
}

TrainResult train_pearl(DerainNet<float>& derain, const SegNet<float>& seg_frozen, const Dataset& data,
                        const TrainConfig& cfg, const TrainHooks& hooks) {
  return derain_loop(derain, &seg_frozen, data, cfg, hooks, DerainRegime::pearl, "train_pearl");
}

TrainResult train_pearl_ama(DerainNet<float>& derain, const SegNet<float>& seg_frozen,
                            const Dataset& data, const TrainConfig& cfg, const TrainHooks& hooks) {
  if (!cfg.ama_enabled) throw std::invalid_argument("train_pearl_ama: ama_enabled is false");
  return derain_loop(derain, &seg_frozen, data, cfg, hooks, DerainRegime::pearl_ama, "train_pearl_ama");
}

Pipeline assemble_nat(std::shared_ptr<const DerainNet<float>> derain,
                      std::shared_ptr<const SegNet<float>> robust_seg) {
  if (!derain) throw std::invalid_argument("assemble_nat: missing derain model");
  return Pipeline("nat", std::move(robust_seg), std::move(derain));
}

}  // namespace rainshield
