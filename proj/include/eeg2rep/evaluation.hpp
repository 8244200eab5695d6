#pragma once

#include "eeg2rep/data.hpp"
#include "eeg2rep/training.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace eeg2rep {

enum class ProbeEncoder { context, target };

std::string_view to_string(ProbeEncoder e);
ProbeEncoder parse_probe_encoder(std::string_view name);

/// Mean-pooled encoder output on the full, unmasked window; one row per
/// window (n x d_e). Windows are independent, so `workers` > 1 only changes
/// wall time.
Matrix extract_representations(const EegDataset& dataset, const ModelState& model,
                               ProbeEncoder encoder = ProbeEncoder::context, int workers = 1);

Vector pooled_representation(const EegWindow& window, const ModelState& model,
                             ProbeEncoder encoder = ProbeEncoder::context);

struct MetricReport {
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;
  std::optional<double> auroc;  // binary tasks with scores only
  double weighted_f1 = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_recall;
  std::vector<double> per_class_f1;
  std::vector<int> support;
};

/// Rows are true classes, columns predicted classes.
Eigen::MatrixXi confusion_matrix(std::span<const int> predicted, std::span<const int> truth, int classes);

/// Metrics from a confusion matrix. Classes without support get recall 0
/// and are left out of the balanced accuracy.
MetricReport metrics_from_confusion(const Eigen::MatrixXi& confusion);

/// AUROC as the Mann-Whitney statistic over mid-ranks. `truth` is 0/1.
double auroc(std::span<const double> scores, std::span<const int> truth);

/// `positive_scores`, when given for a binary task, yields the AUROC.
MetricReport compute_metrics(std::span<const int> predicted, std::span<const int> truth, int classes,
                             std::span<const double> positive_scores = {});

struct ProbeConfig {
  double l2 = 1e-4;
  double tolerance = 1e-6;  // on the change of the objective
  int max_iterations = 10000;
  bool standardize = false;  // z-score features with training statistics
};

/// Multinomial logistic regression on (optionally standardized) features.
struct LogisticModel {
  Matrix weights;  // d x K
  RowVector bias;  // 1 x K
  RowVector mean;  // 1 x d, feature shift
  RowVector scale; // 1 x d, feature divisor
  int iterations = 0;
  double objective = 0.0;

  Matrix logits(const Matrix& x) const;
  Matrix probabilities(const Matrix& x) const;
  std::vector<int> predict(const Matrix& x) const;
};

/// Full-batch gradient descent with backtracking line search on
/// mean cross-entropy + (l2 / 2) ||W||^2. Throws if fewer than 2 classes occur.
LogisticModel fit_logistic(const Matrix& x, std::span<const int> labels, int classes, const ProbeConfig& cfg = {});

/// Evaluates a fitted classifier on (x, labels).
MetricReport evaluate_classifier(const LogisticModel& model, const Matrix& x, std::span<const int> labels,
                                 int classes);

struct ProbeResult {
  LogisticModel model;
  MetricReport report;
};

ProbeResult linear_probe(const Matrix& train_x, std::span<const int> train_y, const Matrix& test_x,
                         std::span<const int> test_y, int classes, const ProbeConfig& cfg = {});

/// Extracts representations of both splits and probes.
ProbeResult probe_model(const ModelState& model, const EegDataset& train, const EegDataset& test,
                        const ProbeConfig& cfg = {}, ProbeEncoder encoder = ProbeEncoder::context, int workers = 1);

/// Embedding, context encoder and a linear head on the pooled output.
template <class T>
struct ClassifierParamsT {
  EmbeddingParamsT<T> embedding;
  EncoderParamsT<T> encoder;
  T head_w, head_b;  // d_e x K, 1 x K

  template <class F, class First, class... S>
  static void zip(const std::string& p, F&& f, First&& first, S&&... s) {
    EmbeddingParamsT<T>::zip(p + "embedding.", f, first.embedding, s.embedding...);
    EncoderParamsT<T>::zip(p + "encoder.", f, first.encoder, s.encoder...);
    f(p + "head_w", first.head_w, s.head_w...);
    f(p + "head_b", first.head_b, s.head_b...);
  }
  template <class U>
  void resize_like(const ClassifierParamsT<U>& o) {
    embedding.resize_like(o.embedding);
    encoder.resize_like(o.encoder);
  }
};

using ClassifierParams = ClassifierParamsT<Matrix>;

struct FineTuneConfig {
  int epochs = 5;
  int batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool random_init = false;  // discard the pretrained weights first
};

void validate(const FineTuneConfig& cfg);

/// Head initialized uniformly in +-1/sqrt(d_e) from `seed`, zero bias.
ClassifierParams make_classifier(const ModelState& model, int classes, std::uint64_t seed);

/// Mean cross-entropy of the classifier; with `grads` also the gradient.
double classifier_loss(const ClassifierParams& params, const ModelConfig& cfg, std::span<const EegWindow* const> batch,
                       ClassifierParams* grads = nullptr);

Matrix classifier_logits(const ClassifierParams& params, const ModelConfig& cfg, const EegDataset& dataset);

struct FineTuneResult {
  ClassifierParams params;
  MetricReport report;               // on the evaluation set
  std::vector<double> epoch_losses;  // evaluation-set loss after each epoch
  double eval_loss = 0.0;
};

/// Supervised training of every classifier parameter with Adam.
FineTuneResult fine_tune(const ModelState& model, const EegDataset& train, const EegDataset& eval,
                         const FineTuneConfig& cfg);

/// Pretrains on split.train/val, then probes train -> test.
struct PretrainProbeResult {
  TrainerState state;
  ProbeResult probe;
};

PretrainProbeResult pretrain_and_probe(const DatasetSplit& data, const ModelConfig& model_cfg,
                                       const PretrainConfig& cfg, const ProbeConfig& probe = {});

struct SweepGrid {
  std::vector<MaskStrategy> strategies{MaskStrategy::ssp, MaskStrategy::random};
  std::vector<double> rhos{0.1, 0.25, 0.5, 0.75, 0.9};
  std::vector<int> betas{1, 2, 3, 4, 5};
};

struct SweepCell {
  MaskStrategy strategy = MaskStrategy::ssp;
  double rho = 0.5;
  int beta = 1;
  std::uint64_t seed = 0;
  std::optional<MetricReport> report;  // empty when the cell is infeasible
  std::string note;
};

/// Seed of grid cell (s, r, b); each cell can be rerun from it alone.
std::uint64_t sweep_cell_seed(std::uint64_t seed, std::size_t s, std::size_t r, std::size_t b);

/// Every strategy x rho x beta cell: pretrain, then probe on the test split.
std::vector<SweepCell> ablation_sweep(const DatasetSplit& data, const ModelConfig& model_cfg,
                                      const PretrainConfig& base, const SweepGrid& grid, std::uint64_t seed,
                                      const ProbeConfig& probe = {});

struct RobustnessPoint {
  NoiseKind kind = NoiseKind::gaussian;
  double magnitude = 0.0;
  MetricReport report;
};

/// Probe fitted on clean training representations, evaluated on the test
/// split perturbed at each magnitude.
std::vector<RobustnessPoint> robustness_eval(const ModelState& model, const EegDataset& train,
                                             const EegDataset& test, std::span<const NoiseKind> kinds,
                                             std::span<const double> magnitudes, std::uint64_t seed,
                                             const ProbeConfig& probe = {},
                                             ProbeEncoder encoder = ProbeEncoder::context);

}  // namespace eeg2rep
