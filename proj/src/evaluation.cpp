#include "eeg2rep/evaluation.hpp"

#include "eeg2rep/params.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

namespace eeg2rep {

std::string_view to_string(ProbeEncoder e) { return e == ProbeEncoder::context ? "context" : "target"; }

ProbeEncoder parse_probe_encoder(std::string_view name) {
  if (name == "context") return ProbeEncoder::context;
  if (name == "target") return ProbeEncoder::target;
  throw ConfigError("unknown probe encoder '" + std::string(name) + "' (expected context or target)");
}

Vector pooled_representation(const EegWindow& window, const ModelState& model, ProbeEncoder encoder) {
  const auto& cfg = model.config;
  if (window.channels() != cfg.channels || window.length() != cfg.length) {
    throw DataError("representation: window shape does not match the model");
  }
  ad::Tape tape(false);
  const auto emb = bind(tape, model.trainable.embedding);
  const auto enc = bind(tape, encoder == ProbeEncoder::context ? model.trainable.context : model.target);
  const ad::Var out = encode(enc, embed(emb, window.samples, cfg.embed), cfg.encoder);
  return out.value().colwise().mean().transpose();
}

Matrix extract_representations(const EegDataset& dataset, const ModelState& model, ProbeEncoder encoder,
                               int workers) {
  const auto n = static_cast<Eigen::Index>(dataset.size());
  Matrix out(n, model.config.encoder.d_e);
  const auto run = [&](Eigen::Index lo, Eigen::Index hi) {
    for (Eigen::Index i = lo; i < hi; ++i) out.row(i) = pooled_representation(dataset.windows[i], model, encoder);
  };
  workers = std::max(1, std::min<int>(workers, static_cast<int>(std::max<Eigen::Index>(n, 1))));
  if (workers == 1) {
    run(0, n);
    return out;
  }
  std::vector<std::thread> pool;
  const Eigen::Index chunk = (n + workers - 1) / workers;
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        run(std::min(n, w * chunk), std::min(n, (w + 1) * chunk));
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

Eigen::MatrixXi confusion_matrix(std::span<const int> predicted, std::span<const int> truth, int classes) {
  if (predicted.size() != truth.size()) throw Error("metrics: prediction and truth lengths differ");
  Eigen::MatrixXi c = Eigen::MatrixXi::Zero(classes, classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= classes || predicted[i] < 0 || predicted[i] >= classes) {
      throw Error("metrics: label out of range at index " + std::to_string(i));
    }
    ++c(truth[i], predicted[i]);
  }
  return c;
}

MetricReport metrics_from_confusion(const Eigen::MatrixXi& c) {
  const int k = static_cast<int>(c.rows());
  const double total = c.sum();
  if (total <= 0) throw Error("metrics: empty confusion matrix");
  MetricReport r;
  r.accuracy = c.diagonal().sum() / total;
  double recall_sum = 0.0, weighted = 0.0, macro = 0.0;
  int supported = 0;
  for (int j = 0; j < k; ++j) {
    const int support = c.row(j).sum();
    const int predicted = c.col(j).sum();
    const double tp = c(j, j);
    const double recall = support > 0 ? tp / support : 0.0;
    const double precision = predicted > 0 ? tp / predicted : 0.0;
    const double f1 = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    r.support.push_back(support);
    r.per_class_recall.push_back(recall);
    r.per_class_f1.push_back(f1);
    if (support > 0) {
      recall_sum += recall;
      ++supported;
    }
    weighted += support * f1;
    macro += f1;
  }
  r.balanced_accuracy = recall_sum / supported;
  r.weighted_f1 = weighted / total;
  r.macro_f1 = macro / k;
  return r;
}

double auroc(std::span<const double> scores, std::span<const int> truth) {
  if (scores.size() != truth.size()) throw Error("auroc: score and truth lengths differ");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = mid;
    i = j + 1;
  }
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (truth[i] != 0 && truth[i] != 1) throw Error("auroc: truth must be 0/1");
    if (truth[i] == 1) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) throw Error("auroc: both classes must be present");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

MetricReport compute_metrics(std::span<const int> predicted, std::span<const int> truth, int classes,
                             std::span<const double> positive_scores) {
  MetricReport r = metrics_from_confusion(confusion_matrix(predicted, truth, classes));
  if (classes == 2 && !positive_scores.empty()) {
    const bool both = std::find(truth.begin(), truth.end(), 0) != truth.end() &&
                      std::find(truth.begin(), truth.end(), 1) != truth.end();
    if (both) r.auroc = auroc(positive_scores, truth);
  }
  return r;
}

namespace {

Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp().matrix();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

Matrix one_hot(std::span<const int> labels, int classes) {
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) y(i, labels[i]) = 1.0;
  return y;
}

double mean_cross_entropy(const Matrix& logits, const Matrix& y) {
  const Vector mx = logits.rowwise().maxCoeff();
  const Vector lse = ((logits.colwise() - mx).array().exp().rowwise().sum().log()).matrix() + mx;
  return (lse - (logits.cwiseProduct(y)).rowwise().sum()).mean();
}

std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index j;
    m.row(i).maxCoeff(&j);
    out[i] = static_cast<int>(j);
  }
  return out;
}

MetricReport report_from_logits(const Matrix& logits, std::span<const int> labels, int classes) {
  const auto pred = argmax_rows(logits);
  std::vector<double> scores;
  if (classes == 2) {
    const Matrix p = softmax_rows(logits);
    scores.assign(p.col(1).data(), p.col(1).data() + p.rows());
  }
  return compute_metrics(pred, labels, classes, scores);
}

}  // namespace

Matrix LogisticModel::logits(const Matrix& x) const {
  const Matrix z = (x.rowwise() - mean).array().rowwise() / scale.array();
  return (z * weights).rowwise() + bias;
}

Matrix LogisticModel::probabilities(const Matrix& x) const { return softmax_rows(logits(x)); }

std::vector<int> LogisticModel::predict(const Matrix& x) const { return argmax_rows(logits(x)); }

LogisticModel fit_logistic(const Matrix& x, std::span<const int> labels, int classes, const ProbeConfig& cfg) {
  if (static_cast<std::size_t>(x.rows()) != labels.size()) throw Error("probe: feature and label counts differ");
  if (x.rows() == 0) throw DataError("probe: empty training set");
  if (classes < 2) throw DataError("probe: need at least 2 classes");
  std::vector<int> seen(classes, 0);
  for (int y : labels) {
    if (y < 0 || y >= classes) throw DataError("probe: label out of range");
    seen[y] = 1;
  }
  if (std::accumulate(seen.begin(), seen.end(), 0) < 2) throw DataError("probe: training labels have a single class");

  const auto n = static_cast<double>(x.rows());
  const Eigen::Index d = x.cols();
  LogisticModel m;
  m.mean = RowVector::Zero(d);
  m.scale = RowVector::Ones(d);
  if (cfg.standardize) {
    m.mean = x.colwise().mean();
    const RowVector sd = ((x.rowwise() - m.mean).array().square().colwise().sum() / n).sqrt();
    for (Eigen::Index j = 0; j < d; ++j) m.scale(j) = sd(j) > 1e-12 ? sd(j) : 1.0;
  }
  const Matrix z = (x.rowwise() - m.mean).array().rowwise() / m.scale.array();
  const Matrix y = one_hot(labels, classes);
  m.weights = Matrix::Zero(d, classes);
  m.bias = RowVector::Zero(classes);

  const auto objective = [&](const Matrix& w, const RowVector& b) {
    return mean_cross_entropy((z * w).rowwise() + b, y) + 0.5 * cfg.l2 * w.squaredNorm();
  };
  double obj = objective(m.weights, m.bias);
  double step = 1.0;
  int it = 0;
  for (; it < cfg.max_iterations; ++it) {
    const Matrix diff = softmax_rows((z * m.weights).rowwise() + m.bias) - y;
    const Matrix gw = z.transpose() * diff / n + cfg.l2 * m.weights;
    const RowVector gb = diff.colwise().sum() / n;
    const double gsq = gw.squaredNorm() + gb.squaredNorm();
    if (gsq == 0.0) break;
    step = std::min(step * 2.0, 1e6);
    double next = objective(m.weights - step * gw, m.bias - step * gb);
    while (next > obj - 0.5 * step * gsq && step > 1e-12) {
      step *= 0.5;
      next = objective(m.weights - step * gw, m.bias - step * gb);
    }
    m.weights -= step * gw;
    m.bias -= step * gb;
    const double delta = obj - next;
    obj = next;
    if (std::abs(delta) < cfg.tolerance) {
      ++it;
      break;
    }
  }
  m.iterations = it;
  m.objective = obj;
  return m;
}

MetricReport evaluate_classifier(const LogisticModel& model, const Matrix& x, std::span<const int> labels,
                                 int classes) {
  return report_from_logits(model.logits(x), labels, classes);
}

ProbeResult linear_probe(const Matrix& train_x, std::span<const int> train_y, const Matrix& test_x,
                         std::span<const int> test_y, int classes, const ProbeConfig& cfg) {
  ProbeResult r;
  r.model = fit_logistic(train_x, train_y, classes, cfg);
  r.report = evaluate_classifier(r.model, test_x, test_y, classes);
  return r;
}

ProbeResult probe_model(const ModelState& model, const EegDataset& train, const EegDataset& test,
                        const ProbeConfig& cfg, ProbeEncoder encoder, int workers) {
  const int classes = std::max(train.num_classes(), test.num_classes());
  const Matrix xtr = extract_representations(train, model, encoder, workers);
  const Matrix xte = extract_representations(test, model, encoder, workers);
  return linear_probe(xtr, train.labels(), xte, test.labels(), classes, cfg);
}

void validate(const FineTuneConfig& cfg) {
  if (cfg.epochs < 0) throw ConfigError("finetune: epochs must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("finetune: batch_size must be >= 1");
  if (!(cfg.lr > 0.0)) throw ConfigError("finetune: lr must be positive");
}

ClassifierParams make_classifier(const ModelState& model, int classes, std::uint64_t seed) {
  if (classes < 2) throw DataError("finetune: need at least 2 classes");
  ClassifierParams p;
  p.embedding = model.trainable.embedding;
  p.encoder = model.trainable.context;
  const int d = model.config.encoder.d_e;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  Rng rng(seed);
  p.head_w.resize(d, classes);
  for (Eigen::Index c = 0; c < p.head_w.cols(); ++c)
    for (Eigen::Index r = 0; r < p.head_w.rows(); ++r) p.head_w(r, c) = uniform(rng, -bound, bound);
  p.head_b = Matrix::Zero(1, classes);
  return p;
}

namespace {

ad::Var classifier_forward(const ClassifierParamsT<ad::Var>& vars, const ModelConfig& cfg,
                           std::span<const EegWindow* const> batch) {
  std::vector<ad::Var> pooled;
  pooled.reserve(batch.size());
  for (const EegWindow* w : batch) {
    if (w->channels() != cfg.channels || w->length() != cfg.length) {
      throw DataError("finetune: window shape does not match the model");
    }
    pooled.push_back(ad::mean_rows(encode(vars.encoder, embed(vars.embedding, w->samples, cfg.embed), cfg.encoder)));
  }
  return ad::linear(ad::stack_rows(pooled), vars.head_w, vars.head_b);
}

std::vector<const EegWindow*> pointers(const EegDataset& ds) {
  std::vector<const EegWindow*> out;
  for (const auto& w : ds.windows) out.push_back(&w);
  return out;
}

}  // namespace

double classifier_loss(const ClassifierParams& params, const ModelConfig& cfg, std::span<const EegWindow* const> batch,
                       ClassifierParams* grads) {
  if (batch.empty()) throw DataError("finetune: empty batch");
  ad::Tape tape(grads != nullptr);
  const auto vars = bind(tape, params, grads);
  std::vector<int> labels;
  for (const EegWindow* w : batch) {
    if (!w->label) throw DataError("finetune: unlabeled window");
    labels.push_back(*w->label);
  }
  const ad::Var loss = ad::softmax_cross_entropy(classifier_forward(vars, cfg, batch), labels);
  if (grads) tape.backward(loss);
  return loss.value()(0, 0);
}

Matrix classifier_logits(const ClassifierParams& params, const ModelConfig& cfg, const EegDataset& dataset) {
  ad::Tape tape(false);
  const auto vars = bind(tape, params);
  const auto ptrs = pointers(dataset);
  return classifier_forward(vars, cfg, ptrs).value();
}

FineTuneResult fine_tune(const ModelState& model, const EegDataset& train, const EegDataset& eval,
                         const FineTuneConfig& cfg) {
  validate(cfg);
  if (train.empty() || eval.empty()) throw DataError("finetune: train and evaluation sets must be nonempty");
  const int classes = std::max(train.num_classes(), eval.num_classes());
  const ModelState start = cfg.random_init ? init_model(model.config, derive_seed(cfg.seed, {3})) : model;
  FineTuneResult r;
  r.params = make_classifier(start, classes, derive_seed(cfg.seed, {1}));
  ClassifierParams m = zeros_like(r.params), v = zeros_like(r.params);
  Rng rng(derive_seed(cfg.seed, {2}));
  const auto train_ptrs = pointers(train);
  const auto eval_ptrs = pointers(eval);
  long t = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<const EegWindow*> batch;
      for (std::size_t i = s; i < std::min(order.size(), s + cfg.batch_size); ++i) batch.push_back(train_ptrs[order[i]]);
      ClassifierParams g = zeros_like(r.params);
      const double loss = classifier_loss(r.params, model.config, batch, &g);
      if (!std::isfinite(loss)) throw TrainingDiverged("finetune diverged (non-finite loss)");
      adam_update(r.params, g, m, v, ++t, cfg.lr, 0.9, 0.999, 1e-8);
    }
    r.epoch_losses.push_back(classifier_loss(r.params, model.config, eval_ptrs));
  }
  r.eval_loss = r.epoch_losses.empty() ? classifier_loss(r.params, model.config, eval_ptrs) : r.epoch_losses.back();
  r.report = report_from_logits(classifier_logits(r.params, model.config, eval), eval.labels(), classes);
  return r;
}

PretrainProbeResult pretrain_and_probe(const DatasetSplit& data, const ModelConfig& model_cfg,
                                       const PretrainConfig& cfg, const ProbeConfig& probe) {
  PretrainProbeResult r;
  r.state = pretrain(data.train, data.val, model_cfg, cfg).state;
  r.probe = probe_model(r.state.model, data.train, data.test, probe);
  return r;
}

std::uint64_t sweep_cell_seed(std::uint64_t seed, std::size_t s, std::size_t r, std::size_t b) {
  return derive_seed(seed, {s, r, b});
}

std::vector<SweepCell> ablation_sweep(const DatasetSplit& data, const ModelConfig& model_cfg,
                                      const PretrainConfig& base, const SweepGrid& grid, std::uint64_t seed,
                                      const ProbeConfig& probe) {
  std::vector<SweepCell> cells;
  for (std::size_t s = 0; s < grid.strategies.size(); ++s) {
    for (std::size_t r = 0; r < grid.rhos.size(); ++r) {
      for (std::size_t b = 0; b < grid.betas.size(); ++b) {
        SweepCell cell;
        cell.strategy = grid.strategies[s];
        cell.rho = grid.rhos[r];
        cell.beta = grid.betas[b];
        cell.seed = sweep_cell_seed(seed, s, r, b);
        PretrainConfig cfg = base;
        cfg.mask.strategy = cell.strategy;
        cfg.mask.rho = cell.rho;
        cfg.mask.beta = cell.beta;
        cfg.train.seed = cell.seed;
        try {
          // Rejects infeasible cells (e.g. more SSP blocks than preserved patches) before training.
          make_plan(model_cfg.patches(), cfg.mask, 0);
          cell.report = pretrain_and_probe(data, model_cfg, cfg, probe).probe.report;
        } catch (const ConfigError& e) {
          cell.note = e.what();
        }
        cells.push_back(std::move(cell));
      }
    }
  }
  return cells;
}

std::vector<RobustnessPoint> robustness_eval(const ModelState& model, const EegDataset& train,
                                             const EegDataset& test, std::span<const NoiseKind> kinds,
                                             std::span<const double> magnitudes, std::uint64_t seed,
                                             const ProbeConfig& probe, ProbeEncoder encoder) {
  for (double m : magnitudes) {
    if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("robustness: magnitudes must lie in [0, 1]");
  }
  const int classes = std::max(train.num_classes(), test.num_classes());
  const auto fitted = fit_logistic(extract_representations(train, model, encoder), train.labels(), classes, probe);
  const auto labels = test.labels();
  std::vector<RobustnessPoint> out;
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    for (std::size_t i = 0; i < magnitudes.size(); ++i) {
      const EegDataset noisy =
          apply_noise(test, NoiseSpec::defaults(kinds[k]), magnitudes[i], derive_seed(seed, {k, i}));
      RobustnessPoint p;
      p.kind = kinds[k];
      p.magnitude = magnitudes[i];
      p.report = evaluate_classifier(fitted, extract_representations(noisy, model, encoder), labels, classes);
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace eeg2rep
