#pragma once

#include "eeg2rep/data.hpp"
#include "eeg2rep/embedding.hpp"
#include "eeg2rep/losses.hpp"
#include "eeg2rep/masking.hpp"
#include "eeg2rep/networks.hpp"
#include "eeg2rep/rng.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>

namespace eeg2rep {

/// What the predictor regresses: the target encoder's normalized patch
/// representations, or the normalized raw samples under each patch.
enum class TargetSpace { latent, input };

std::string_view to_string(TargetSpace t);
TargetSpace parse_target_space(std::string_view name);

struct ModelConfig {
  int channels = 4;
  int length = 128;
  EmbedConfig embed;
  EncoderConfig encoder;
  PredictorConfig predictor;
  TargetSpace target_space = TargetSpace::latent;

  int patches() const { return patch_count(embed, length); }
  int predictor_output_dim() const {
    return target_space == TargetSpace::latent ? encoder.d_e : channels * embed.pool_size;
  }
};

void validate(const ModelConfig& cfg);

/// Every tensor updated by the optimizer.
template <class T>
struct TrainableT {
  EmbeddingParamsT<T> embedding;
  EncoderParamsT<T> context;
  PredictorParamsT<T> predictor;

  template <class F, class First, class... S>
  static void zip(const std::string& p, F&& f, First&& first, S&&... s) {
    EmbeddingParamsT<T>::zip(p + "embedding.", f, first.embedding, s.embedding...);
    EncoderParamsT<T>::zip(p + "context.", f, first.context, s.context...);
    PredictorParamsT<T>::zip(p + "predictor.", f, first.predictor, s.predictor...);
  }
  template <class U>
  void resize_like(const TrainableT<U>& o) {
    embedding.resize_like(o.embedding);
    context.resize_like(o.context);
    predictor.resize_like(o.predictor);
  }
};

using Trainable = TrainableT<Matrix>;

struct ModelState {
  ModelConfig config;
  Trainable trainable;
  EncoderParams target;  // EMA copy of trainable.context
};

/// Fresh parameters; the target encoder starts as a copy of the context encoder.
ModelState init_model(const ModelConfig& cfg, std::uint64_t seed);

struct EmaSchedule {
  double tau0 = 0.996;
  double tau_e = 0.9999;
  long tau_n = 0;  // updates; 0 selects tau_n_fraction of the total
  double tau_n_fraction = 0.3;

  /// tau0 + (tau_e - tau0) * min(step, tau_n) / tau_n.
  double tau(long step) const;
};

void validate(const EmaSchedule& s);

/// Blends target toward source with tau(step); returns the tau used.
double ema_update(EncoderParams& target, const EncoderParams& source, long step, const EmaSchedule& sched);

/// Half-cosine decay from lr0 at step 0 to 0 at step total_steps - 1.
double cosine_lr(double lr0, long step, long total_steps);

struct TrainConfig {
  int batch_size = 256;
  int epochs = 500;
  double lr0 = 1e-3;
  int early_stop_patience = 0;  // epochs without val improvement; 0 disables
  double max_grad_norm = 0.0;   // 0 disables clipping
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

struct PretrainConfig {
  MaskConfig mask;
  LossConfig loss;
  EmaSchedule ema;
  TrainConfig train;
};

struct AdamState {
  Trainable m;
  Trainable v;
  long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState init_adam(const Trainable& params);
void adam_step(Trainable& params, const Trainable& grads, AdamState& state, double lr);

/// Outputs of one batch objective evaluation.
struct BatchLoss {
  LossBreakdown loss;
  double rep_std_min = 0.0;  // min over dims of the pooled context std
  long target_passes = 0;
};

/// Evaluates the full objective on `batch` with per-sample mask seeds. With
/// `grads` (zero-filled, Trainable layout) the gradient is accumulated into
/// it. `fixed_targets`, when non-empty, replaces the per-sample target
/// matrices (one per window), which finite-difference checks use to hold the
/// stop-gradient branch constant.
BatchLoss batch_objective(const ModelState& model, std::span<const EegWindow* const> batch,
                          std::span<const std::uint64_t> mask_seeds, const PretrainConfig& cfg,
                          Trainable* grads = nullptr, std::span<const Matrix> fixed_targets = {});

/// Per-patch regression targets for one window under cfg.target_space.
Matrix regression_targets(const Matrix& patches, const EegWindow& window, const ModelState& model);

struct TrainLogRow {
  long step = 0;
  double lr = 0.0;
  double tau = 0.0;
  LossBreakdown loss;
  std::optional<double> val_total;
  double rep_std_min = 0.0;
};

/// CSV header and row formatting of the training log (17 significant digits).
std::string train_log_header();
std::string format_log_row(const TrainLogRow& row);

/// Everything needed to continue training bit-exactly.
struct TrainerState {
  ModelState model;
  AdamState adam;
  long step = 0;
  int epoch = 0;
  long total_steps = 0;
  std::optional<double> best_val;
  int bad_epochs = 0;
  bool stopped_early = false;
  long target_passes = 0;
  long samples_seen = 0;
  Rng rng;
};

/// Collapse threshold on the minimum per-dimension std.
inline constexpr double kCollapseStd = 1e-3;

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

class Trainer {
 public:
  struct Hooks {
    std::function<void(const TrainLogRow&)> on_step;
    std::function<void(const TrainerState&)> on_best;   // validation improved
    std::function<void(const TrainerState&)> on_epoch;  // after bookkeeping
  };

  /// Starts from `model` with a fresh optimizer.
  Trainer(const PretrainConfig& cfg, ModelState model, const EegDataset& train, const EegDataset& val);
  /// Continues from a saved state.
  Trainer(const PretrainConfig& cfg, TrainerState state, const EegDataset& train, const EegDataset& val);

  static long steps_per_epoch(std::size_t n, int batch_size);

  bool done() const;
  /// One pass over the training set, then validation and early stopping.
  void run_epoch(const Hooks& hooks = {});
  /// Runs epochs until done(); stops after `max_epochs` more when given.
  void run(const Hooks& hooks = {}, std::optional<int> max_epochs = std::nullopt);

  /// Mean total objective over the validation set under fixed mask seeds.
  double validation_loss() const;

  const TrainerState& state() const { return state_; }
  const PretrainConfig& config() const { return cfg_; }

 private:
  void check_inputs() const;

  PretrainConfig cfg_;
  TrainerState state_;
  const EegDataset& train_;
  const EegDataset& val_;
};

struct PretrainResult {
  TrainerState state;
  std::vector<TrainLogRow> log;
};

/// Convenience wrapper: initialize from cfg.train.seed and train to completion.
PretrainResult pretrain(const EegDataset& train, const EegDataset& val, const ModelConfig& model_cfg,
                        const PretrainConfig& cfg);

}  // namespace eeg2rep
