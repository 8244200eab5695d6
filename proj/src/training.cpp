#include "eeg2rep/training.hpp"

#include "eeg2rep/params.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

namespace eeg2rep {

std::string_view to_string(TargetSpace t) { return t == TargetSpace::latent ? "latent" : "input"; }

TargetSpace parse_target_space(std::string_view name) {
  if (name == "latent") return TargetSpace::latent;
  if (name == "input") return TargetSpace::input;
  throw ConfigError("unknown target space '" + std::string(name) + "'");
}

void validate(const ModelConfig& cfg) {
  if (cfg.channels < 1) throw ConfigError("model: channels must be >= 1");
  validate(cfg.embed, cfg.length);
  validate(cfg.encoder);
  validate(cfg.predictor, cfg.encoder.d_e);
}

void validate(const LossConfig& cfg) {
  if (cfg.lambda < 0 || cfg.mu < 0 || cfg.gamma < 0 || cfg.variance_target < 0 || cfg.eps < 0) {
    throw ConfigError("loss: weights, variance_target and eps must be nonnegative");
  }
}

void validate(const EmaSchedule& s) {
  if (!(0.0 <= s.tau0 && s.tau0 <= s.tau_e && s.tau_e <= 1.0)) {
    throw ConfigError("ema: need 0 <= tau0 <= tau_e <= 1");
  }
  if (s.tau_n < 0) throw ConfigError("ema: tau_n must be >= 1 (or 0 for the fractional default)");
  if (!(s.tau_n_fraction > 0.0 && s.tau_n_fraction <= 1.0)) throw ConfigError("ema: tau_n_fraction must lie in (0, 1]");
}

void validate(const TrainConfig& cfg) {
  if (cfg.batch_size < 2) throw ConfigError("training: batch_size must be >= 2");
  if (cfg.epochs < 1) throw ConfigError("training: epochs must be >= 1");
  if (!(cfg.lr0 > 0.0)) throw ConfigError("training: lr0 must be positive");
  if (cfg.early_stop_patience < 0) throw ConfigError("training: early_stop_patience must be >= 0");
  if (cfg.max_grad_norm < 0.0) throw ConfigError("training: max_grad_norm must be >= 0");
}

double reconstruction_loss(std::span<const Matrix> targets, std::span<const Matrix> predictions) {
  if (targets.size() != predictions.size()) throw Error("reconstruction_loss: block count mismatch");
  double sum = 0.0;
  int blocks = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i].rows() != predictions[i].rows() || targets[i].cols() != predictions[i].cols()) {
      throw Error("reconstruction_loss: shape mismatch in block " + std::to_string(i));
    }
    if (targets[i].rows() == 0) continue;
    sum += (targets[i] - predictions[i]).squaredNorm();
    ++blocks;
  }
  if (blocks == 0) throw Error("reconstruction_loss: every loss index set is empty");
  return sum / blocks;
}

double multi_view_loss(std::span<const double> per_view) {
  if (per_view.empty()) throw Error("multi_view_loss: no views");
  double sum = 0.0;
  for (double v : per_view) sum += v;
  return sum / static_cast<double>(per_view.size());
}

LossBreakdown total_loss(double rec, double var, double cov, const LossConfig& cfg) {
  return {rec, var, cov, cfg.lambda * rec + cfg.mu * var + cfg.gamma * cov};
}

ModelState init_model(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  ModelState m;
  m.config = cfg;
  m.trainable.embedding = init_embedding(cfg.embed, cfg.channels, cfg.length, derive_seed(seed, {1}));
  m.trainable.context = init_encoder(cfg.encoder, cfg.embed.d_x(), derive_seed(seed, {2}));
  m.trainable.predictor =
      init_predictor(cfg.predictor, cfg.encoder.d_e, cfg.patches(), cfg.predictor_output_dim(), derive_seed(seed, {3}));
  m.target = m.trainable.context;
  return m;
}

double EmaSchedule::tau(long step) const {
  if (tau_n < 1) throw ConfigError("ema: tau_n must be resolved to >= 1 before use");
  const double frac = static_cast<double>(std::min(std::max(step, 0L), tau_n)) / static_cast<double>(tau_n);
  return tau0 + (tau_e - tau0) * frac;
}

double ema_update(EncoderParams& target, const EncoderParams& source, long step, const EmaSchedule& sched) {
  const double tau = sched.tau(step);
  ema_blend(target, source, tau);
  return tau;
}

double cosine_lr(double lr0, long step, long total_steps) {
  if (total_steps <= 1) return lr0;
  const double progress = static_cast<double>(std::clamp(step, 0L, total_steps - 1)) / (total_steps - 1);
  return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamState init_adam(const Trainable& params) {
  AdamState s;
  s.m = zeros_like(params);
  s.v = zeros_like(params);
  return s;
}

void adam_step(Trainable& params, const Trainable& grads, AdamState& state, double lr) {
  ++state.t;
  adam_update(params, grads, state.m, state.v, state.t, lr, state.beta1, state.beta2, state.eps);
}

Matrix regression_targets(const Matrix& patches, const EegWindow& window, const ModelState& model) {
  const auto& cfg = model.config;
  if (cfg.target_space == TargetSpace::latent) return encode_target(patches, model.target, cfg.encoder);
  const int l = cfg.patches();
  const int p = cfg.embed.pool_size;
  Matrix raw(l, cfg.channels * p);
  for (int j = 0; j < l; ++j) {
    for (int c = 0; c < cfg.channels; ++c) raw.block(j, c * p, 1, p) = window.samples.block(c, j * p, 1, p);
  }
  return normalize_rows(raw);
}

BatchLoss batch_objective(const ModelState& model, std::span<const EegWindow* const> batch,
                          std::span<const std::uint64_t> mask_seeds, const PretrainConfig& cfg, Trainable* grads,
                          std::span<const Matrix> fixed_targets) {
  const std::size_t batch_n = batch.size();
  if (batch_n < 2) throw Error("training: a batch needs at least 2 windows for the variance/covariance terms");
  if (mask_seeds.size() != batch_n) throw Error("training: one mask seed per window is required");
  if (!fixed_targets.empty() && fixed_targets.size() != batch_n) throw Error("training: fixed_targets size mismatch");
  const auto& mc = model.config;
  const int l = mc.patches();
  const int views = cfg.mask.num_views;

  ad::Tape tape(grads != nullptr);
  const auto emb = bind(tape, model.trainable.embedding, grads ? &grads->embedding : nullptr);
  const auto ctx = bind(tape, model.trainable.context, grads ? &grads->context : nullptr);
  const auto pred = bind(tape, model.trainable.predictor, grads ? &grads->predictor : nullptr);

  struct Pending {
    ad::Var term;
    int blocks;  // nonempty loss blocks in this view
    std::size_t sample;
  };
  std::vector<std::vector<ad::Var>> pooled(views);
  std::vector<Pending> pending;
  std::vector<int> views_with_loss(batch_n, 0);
  BatchLoss out;

  for (std::size_t b = 0; b < batch_n; ++b) {
    const EegWindow& w = *batch[b];
    if (w.channels() != mc.channels || w.length() != mc.length) {
      throw DataError("training: window shape does not match the model");
    }
    const ad::Var patches = embed(emb, w.samples, mc.embed);
    const Matrix targets = fixed_targets.empty() ? regression_targets(patches.value(), w, model) : fixed_targets[b];
    ++out.target_passes;
    const auto plans = make_views(l, cfg.mask, mask_seeds[b]);
    for (int q = 0; q < views; ++q) {
      const auto& plan = plans[q];
      const ad::Var rep = encode(ctx, ad::gather_rows(patches, plan.preserved), mc.encoder);
      pooled[q].push_back(ad::mean_rows(rep));
      IndexList rows;
      int blocks = 0;
      for (const auto& li : plan.loss_indices) {
        if (li.empty()) continue;
        ++blocks;
        rows.insert(rows.end(), li.begin(), li.end());
      }
      if (blocks == 0) continue;
      Matrix y(static_cast<Eigen::Index>(rows.size()), targets.cols());
      for (std::size_t r = 0; r < rows.size(); ++r) y.row(r) = targets.row(rows[r]);
      const ad::Var yhat = predict(pred, rep, rows, mc.predictor);
      pending.push_back({ad::squared_error_sum(yhat, y), blocks, b});
      ++views_with_loss[b];
    }
  }

  const auto samples_with_loss =
      static_cast<double>(std::count_if(views_with_loss.begin(), views_with_loss.end(), [](int v) { return v > 0; }));
  std::vector<std::pair<double, ad::Var>> rec_terms;
  for (const auto& p : pending) {
    rec_terms.emplace_back(1.0 / (p.blocks * views_with_loss[p.sample] * samples_with_loss), p.term);
  }
  const ad::Var rec = rec_terms.empty() ? tape.constant(Matrix::Zero(1, 1)) : ad::weighted_sum(rec_terms);

  std::vector<std::pair<double, ad::Var>> total_terms{{cfg.loss.lambda, rec}};
  double var_sum = 0.0, cov_sum = 0.0;
  Matrix all_pooled(static_cast<Eigen::Index>(batch_n) * views, mc.encoder.d_e);
  for (int q = 0; q < views; ++q) {
    const ad::Var r = ad::stack_rows(pooled[q]);
    all_pooled.middleRows(q * static_cast<Eigen::Index>(batch_n), batch_n) = r.value();
    const ad::Var v = ad::variance_hinge(r, cfg.loss.variance_target, cfg.loss.eps);
    const ad::Var c = ad::offdiag_covariance(r);
    var_sum += v.value()(0, 0);
    cov_sum += c.value()(0, 0);
    total_terms.emplace_back(cfg.loss.mu / views, v);
    total_terms.emplace_back(cfg.loss.gamma / views, c);
  }
  const ad::Var total = ad::weighted_sum(total_terms);

  out.loss.rec = rec.value()(0, 0);
  out.loss.var = var_sum / views;
  out.loss.cov = cov_sum / views;
  out.loss.total = total.value()(0, 0);
  out.rep_std_min = column_std(all_pooled).minCoeff();
  if (grads) tape.backward(total);
  return out;
}

std::string train_log_header() { return "step,lr,tau,rec,var,cov,total,val_total,rep_std_min"; }

std::string format_log_row(const TrainLogRow& row) {
  char buf[512];
  char val[64] = "";
  if (row.val_total) std::snprintf(val, sizeof val, "%.17g", *row.val_total);
  std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%s,%.17g", row.step, row.lr, row.tau,
                row.loss.rec, row.loss.var, row.loss.cov, row.loss.total, val, row.rep_std_min);
  return buf;
}

namespace {

PretrainConfig resolve(PretrainConfig cfg, std::size_t train_n) {
  validate(cfg.mask);
  validate(cfg.loss);
  validate(cfg.ema);
  validate(cfg.train);
  const long total = Trainer::steps_per_epoch(train_n, cfg.train.batch_size) * cfg.train.epochs;
  if (cfg.ema.tau_n == 0) {
    cfg.ema.tau_n = std::max(1L, std::lround(cfg.ema.tau_n_fraction * static_cast<double>(total)));
  }
  return cfg;
}

double grad_norm(const Trainable& g) {
  double sq = 0.0;
  Trainable::zip("", [&](const std::string&, const Matrix& m) { sq += m.squaredNorm(); }, g);
  return std::sqrt(sq);
}

}  // namespace

long Trainer::steps_per_epoch(std::size_t n, int batch_size) {
  const auto b = static_cast<std::size_t>(batch_size);
  return static_cast<long>(n / b + (n % b >= 2 ? 1 : 0));
}

Trainer::Trainer(const PretrainConfig& cfg, ModelState model, const EegDataset& train, const EegDataset& val)
    : cfg_(resolve(cfg, train.size())), train_(train), val_(val) {
  check_inputs();
  state_.adam = init_adam(model.trainable);
  state_.model = std::move(model);
  state_.total_steps = steps_per_epoch(train.size(), cfg_.train.batch_size) * cfg_.train.epochs;
  state_.rng.seed(derive_seed(cfg_.train.seed, {0x7a11u}));
}

Trainer::Trainer(const PretrainConfig& cfg, TrainerState state, const EegDataset& train, const EegDataset& val)
    : cfg_(resolve(cfg, train.size())), state_(std::move(state)), train_(train), val_(val) {
  check_inputs();
  if (state_.total_steps != steps_per_epoch(train.size(), cfg_.train.batch_size) * cfg_.train.epochs) {
    throw ConfigError("resume: the saved schedule length does not match this configuration and dataset");
  }
}

void Trainer::check_inputs() const {
  if (train_.size() < 2) throw DataError("pretrain: the training set needs at least 2 windows");
  if (val_.size() < 2) throw DataError("pretrain: the validation set needs at least 2 windows");
}

bool Trainer::done() const { return state_.stopped_early || state_.epoch >= cfg_.train.epochs; }

double Trainer::validation_loss() const {
  const std::size_t n = val_.size();
  const auto b = static_cast<std::size_t>(cfg_.train.batch_size);
  double weighted = 0.0;
  std::size_t counted = 0;
  for (std::size_t start = 0; start < n; start += b) {
    std::size_t end = std::min(n, start + b);
    if (end - start < 2) break;
    std::vector<const EegWindow*> batch;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(&val_.windows[i]);
      seeds.push_back(derive_seed(cfg_.train.seed, {0x7a1u, i}));
    }
    const auto r = batch_objective(state_.model, batch, seeds, cfg_);
    weighted += r.loss.total * static_cast<double>(end - start);
    counted += end - start;
  }
  return weighted / static_cast<double>(counted);
}

void Trainer::run_epoch(const Hooks& hooks) {
  if (done()) return;
  const std::size_t n = train_.size();
  const auto b = static_cast<std::size_t>(cfg_.train.batch_size);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  shuffle(order.begin(), order.end(), state_.rng);
  const long steps = steps_per_epoch(n, cfg_.train.batch_size);
  TrainLogRow last;
  for (long s = 0; s < steps; ++s) {
    const std::size_t start = static_cast<std::size_t>(s) * b;
    const std::size_t end = std::min(n, start + b);
    std::vector<const EegWindow*> batch;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(&train_.windows[order[i]]);
      seeds.push_back(state_.rng());
    }
    Trainable grads = zeros_like(state_.model.trainable);
    const auto r = batch_objective(state_.model, batch, seeds, cfg_, &grads);
    if (!std::isfinite(r.loss.total) || !all_finite(grads)) {
      throw TrainingDiverged("training diverged at step " + std::to_string(state_.step) + " (non-finite loss)");
    }
    if (cfg_.train.max_grad_norm > 0.0) {
      const double norm = grad_norm(grads);
      if (norm > cfg_.train.max_grad_norm) {
        const double f = cfg_.train.max_grad_norm / norm;
        Trainable::zip("", [f](const std::string&, Matrix& m) { m *= f; }, grads);
      }
    }
    const double lr = cosine_lr(cfg_.train.lr0, state_.step, state_.total_steps);
    adam_step(state_.model.trainable, grads, state_.adam, lr);
    const double tau = ema_update(state_.model.target, state_.model.trainable.context, state_.step, cfg_.ema);
    state_.target_passes += r.target_passes;
    state_.samples_seen += static_cast<long>(batch.size());
    TrainLogRow row{state_.step, lr, tau, r.loss, std::nullopt, r.rep_std_min};
    ++state_.step;
    if (s + 1 < steps) {
      if (hooks.on_step) hooks.on_step(row);
    } else {
      last = row;
    }
  }
  const double val = validation_loss();
  last.val_total = val;
  if (hooks.on_step) hooks.on_step(last);
  ++state_.epoch;
  if (!state_.best_val || val < *state_.best_val) {
    state_.best_val = val;
    state_.bad_epochs = 0;
    if (hooks.on_best) hooks.on_best(state_);
  } else {
    ++state_.bad_epochs;
    if (cfg_.train.early_stop_patience > 0 && state_.bad_epochs >= cfg_.train.early_stop_patience) {
      state_.stopped_early = true;
    }
  }
  if (hooks.on_epoch) hooks.on_epoch(state_);
}

void Trainer::run(const Hooks& hooks, std::optional<int> max_epochs) {
  int ran = 0;
  while (!done() && (!max_epochs || ran < *max_epochs)) {
    run_epoch(hooks);
    ++ran;
  }
}

PretrainResult pretrain(const EegDataset& train, const EegDataset& val, const ModelConfig& model_cfg,
                        const PretrainConfig& cfg) {
  Trainer trainer(cfg, init_model(model_cfg, cfg.train.seed), train, val);
  PretrainResult result;
  Trainer::Hooks hooks;
  hooks.on_step = [&](const TrainLogRow& row) { result.log.push_back(row); };
  trainer.run(hooks);
  result.state = trainer.state();
  return result;
}

}  // namespace eeg2rep
