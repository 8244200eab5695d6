#include <doctest.h>

#include "eeg2rep/evaluation.hpp"
#include "eeg2rep/params.hpp"

#include "gradcheck.hpp"
#include "metric_oracles.hpp"

#include <algorithm>
#include <numeric>

using namespace eeg2rep;

namespace {

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.channels = 2;
  mc.length = 32;
  mc.embed.num_filters = 8;
  mc.encoder.d_e = 8;
  mc.encoder.heads = 2;
  mc.encoder.layers = 1;
  mc.predictor.heads = 2;
  mc.predictor.layers = 1;
  return mc;
}

EegDataset tiny_data(int n, std::uint64_t seed) {
  SynthConfig sc;
  sc.n = n;
  sc.channels = 2;
  sc.length = 32;
  sc.seed = seed;
  return synthesize_dataset(sc);
}

// Two Gaussian blobs at +-c along the first axis.
void blobs(Rng& rng, int n, double c, double sd, Matrix& x, std::vector<int>& y) {
  x.resize(n, 3);
  y.resize(n);
  for (int i = 0; i < n; ++i) {
    y[i] = i % 2;
    for (int j = 0; j < 3; ++j) x(i, j) = sd * standard_normal(rng);
    x(i, 0) += y[i] ? c : -c;
  }
}

}  // namespace

TEST_CASE("AUROC examples") {
  const std::vector<int> t{1, 0, 1, 0};
  const std::vector<double> s{0.9, 0.8, 0.7, 0.1};
  CHECK(auroc(s, t) == doctest::Approx(0.75));
  const std::vector<double> perfect{0.9, 0.1, 0.8, 0.2};
  CHECK(auroc(perfect, t) == 1.0);
  const std::vector<double> flat(4, 0.3);
  CHECK(auroc(flat, t) == 0.5);
  const std::vector<int> one_class{1, 1};
  CHECK_THROWS(auroc(std::vector<double>{0.1, 0.2}, one_class));
}

TEST_CASE("AUROC rank statistic equals pair enumeration") {
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 2 + static_cast<int>(uniform_index(rng, 99));
    std::vector<int> truth(n);
    std::vector<double> scores(n);
    for (int i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(uniform_index(rng, 2));
      // Coarse scores so ties are common.
      scores[i] = static_cast<double>(uniform_index(rng, 7)) / 7.0;
    }
    truth[0] = 0;
    truth[1] = 1;
    CHECK(std::abs(auroc(scores, truth) - test::brute_force_auroc(scores, truth)) < 1e-12);
  }
}

TEST_CASE("balanced accuracy and weighted F1 on hand-worked confusion matrices") {
  for (const auto& c : test::confusion_cases()) {
    const auto r = metrics_from_confusion(c.confusion);
    CHECK(r.balanced_accuracy == doctest::Approx(c.balanced_accuracy).epsilon(1e-12));
    CHECK(r.weighted_f1 == doctest::Approx(c.weighted_f1).epsilon(1e-12));
  }
}

TEST_CASE("metric identities on balanced data") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + static_cast<int>(uniform_index(rng, 3));
    std::vector<int> truth, pred;
    for (int c = 0; c < k; ++c)
      for (int i = 0; i < 10; ++i) {
        truth.push_back(c);
        pred.push_back(static_cast<int>(uniform_index(rng, k)));
      }
    const auto r = compute_metrics(pred, truth, k);
    CHECK(r.balanced_accuracy == doctest::Approx(r.accuracy).epsilon(1e-12));
    CHECK(r.weighted_f1 == doctest::Approx(r.macro_f1).epsilon(1e-12));
    CHECK(r.support == std::vector<int>(k, 10));
  }
}

TEST_CASE("confusion matrix layout and range checks") {
  const std::vector<int> pred{0, 1, 1, 2};
  const std::vector<int> truth{0, 0, 1, 2};
  const auto c = confusion_matrix(pred, truth, 3);
  CHECK(c(0, 0) == 1);
  CHECK(c(0, 1) == 1);
  CHECK(c(1, 1) == 1);
  CHECK(c(2, 2) == 1);
  CHECK(c.sum() == 4);
  CHECK_THROWS(confusion_matrix(std::vector<int>{3}, std::vector<int>{0}, 3));
}

TEST_CASE("logistic probe separates blobs and is at chance on shuffled labels") {
  Rng rng(5);
  Matrix x, tx;
  std::vector<int> y, ty;
  blobs(rng, 200, 2.0, 0.3, x, y);
  blobs(rng, 200, 2.0, 0.3, tx, ty);
  const auto sep = linear_probe(x, y, tx, ty, 2);
  CHECK(sep.report.accuracy == 1.0);
  CHECK(*sep.report.auroc == 1.0);
  CHECK(sep.model.iterations <= 10000);

  double mean = 0.0;
  const int reps = 20;
  for (int r = 0; r < reps; ++r) {
    std::vector<int> shuffled = y;
    shuffle(shuffled.begin(), shuffled.end(), rng);
    mean += linear_probe(x, shuffled, tx, ty, 2).report.accuracy / reps;
  }
  CHECK(std::abs(mean - 0.5) < 0.1);
}

TEST_CASE("duplicating the training set leaves the fitted probe unchanged") {
  Rng rng(6);
  Matrix x, tx;
  std::vector<int> y, ty;
  blobs(rng, 60, 0.5, 1.0, x, y);
  blobs(rng, 60, 0.5, 1.0, tx, ty);
  Matrix x2(120, 3);
  x2 << x, x;
  std::vector<int> y2 = y;
  y2.insert(y2.end(), y.begin(), y.end());
  const auto a = fit_logistic(x, y, 2);
  const auto b = fit_logistic(x2, y2, 2);
  CHECK((a.weights - b.weights).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(a.predict(tx) == b.predict(tx));
}

TEST_CASE("probe stopping rule and input checks") {
  Rng rng(7);
  Matrix x;
  std::vector<int> y;
  blobs(rng, 40, 0.3, 1.0, x, y);
  ProbeConfig cfg;
  cfg.max_iterations = 3;
  CHECK(fit_logistic(x, y, 2, cfg).iterations == 3);
  const std::vector<int> single(40, 1);
  CHECK_THROWS_AS(fit_logistic(x, single, 2), DataError);
  cfg = {};
  cfg.standardize = true;
  const auto m = fit_logistic(x, y, 2, cfg);
  const Matrix p = m.probabilities(x);
  CHECK((p.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("representations: shape, purity, order invariance, zero encoder") {
  const auto ds = tiny_data(10, 1);
  ModelState model = init_model(tiny_model(), 2);
  const Matrix r = extract_representations(ds, model);
  CHECK(r.rows() == 10);
  CHECK(r.cols() == 8);
  CHECK(extract_representations(ds, model, ProbeEncoder::context, 4) == r);

  EegDataset rev = ds;
  std::reverse(rev.windows.begin(), rev.windows.end());
  const Matrix rr = extract_representations(rev, model);
  for (int i = 0; i < 10; ++i) CHECK(rr.row(i) == r.row(9 - i));

  CHECK(extract_representations(ds, model, ProbeEncoder::target) == r);  // target starts as a copy

  model.trainable.context.final_gamma.setZero();
  model.trainable.context.final_beta.setZero();
  CHECK(extract_representations(ds, model).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fine-tuning with zero epochs reports the head at initialization") {
  const auto train = tiny_data(12, 1);
  const auto eval = tiny_data(10, 2);
  const auto model = init_model(tiny_model(), 3);
  FineTuneConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 5;
  const auto r = fine_tune(model, train, eval, cfg);
  const auto head = make_classifier(model, 2, derive_seed(cfg.seed, {1}));
  CHECK(r.params.head_w == head.head_w);
  const Matrix logits = classifier_logits(head, model.config, eval);
  std::vector<int> pred(eval.size());
  for (std::size_t i = 0; i < eval.size(); ++i) logits.row(static_cast<Eigen::Index>(i)).maxCoeff(&pred[i]);
  const auto want = compute_metrics(pred, eval.labels(), 2);
  CHECK(r.report.accuracy == want.accuracy);
  CHECK(r.report.weighted_f1 == want.weighted_f1);
  CHECK(r.epoch_losses.empty());
}

TEST_CASE("classifier gradients match finite differences") {
  const auto ds = tiny_data(4, 8);
  const auto model = init_model(tiny_model(), 4);
  ClassifierParams p = make_classifier(model, 2, 1);
  std::vector<const EegWindow*> batch;
  for (const auto& w : ds.windows) batch.push_back(&w);
  ClassifierParams g = zeros_like(p);
  classifier_loss(p, model.config, batch, &g);
  ClassifierParams::zip(
      "",
      [&](const std::string& name, Matrix& param, const Matrix& analytic) {
        Matrix num(param.rows(), param.cols());
        for (Eigen::Index i = 0; i < param.size(); ++i) {
          const double o = param.data()[i];
          param.data()[i] = o + 1e-5;
          const double a = classifier_loss(p, model.config, batch);
          param.data()[i] = o - 1e-5;
          const double b = classifier_loss(p, model.config, batch);
          param.data()[i] = o;
          num.data()[i] = (a - b) / 2e-5;
        }
        CAPTURE(name);
        CHECK(test::relative_error(analytic, num) < 1e-4);
      },
      p, g);
}

TEST_CASE("fine-tuning lowers the evaluation loss and random init differs from pretrained") {
  const auto train = tiny_data(32, 1);
  const auto eval = tiny_data(16, 2);
  const auto model = init_model(tiny_model(), 6);
  FineTuneConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  cfg.lr = 3e-3;
  cfg.epochs = 0;
  const double before = fine_tune(model, train, eval, cfg).eval_loss;
  cfg.epochs = 5;
  const auto r = fine_tune(model, train, eval, cfg);
  CHECK(r.epoch_losses.size() == 5u);
  CHECK(r.eval_loss < before);
  cfg.random_init = true;
  const auto rnd = fine_tune(model, train, eval, cfg);
  CHECK(rnd.params.encoder.layers[0].wq != r.params.encoder.layers[0].wq);
  cfg.epochs = -1;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
}

TEST_CASE("pretrained initialization fine-tunes at least as well as random after one epoch") {
  SynthConfig sc;
  sc.n = 256;
  sc.channels = 2;
  sc.length = 32;
  sc.seed = 21;
  const auto sp = split(synthesize_dataset(sc), SplitSpec{}, 1);
  PretrainConfig pc;
  pc.mask.beta = 2;
  pc.train.epochs = 30;
  pc.train.batch_size = 16;
  pc.train.lr0 = 3e-3;
  pc.train.seed = 2;
  const auto pre = pretrain(sp.train, sp.val, tiny_model(), pc).state.model;
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    FineTuneConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    cfg.seed = seed;
    const double p = fine_tune(pre, sp.train, sp.val, cfg).eval_loss;
    cfg.random_init = true;
    const double r = fine_tune(pre, sp.train, sp.val, cfg).eval_loss;
    wins += p <= r;
  }
  CHECK(wins >= 6);
}

TEST_CASE("sweep grid: size, cell seeds and reproducibility") {
  SynthConfig sc;
  sc.n = 40;
  sc.channels = 2;
  sc.length = 32;
  const auto sp = split(synthesize_dataset(sc), SplitSpec{}, 1);
  PretrainConfig pc;
  pc.train.epochs = 1;
  pc.train.batch_size = 8;
  SweepGrid grid;
  grid.rhos = {0.5, 0.9};
  grid.betas = {1, 5};
  const auto cells = ablation_sweep(sp, tiny_model(), pc, grid, 3);
  CHECK(cells.size() == 8u);
  CHECK(cells[0].seed == sweep_cell_seed(3, 0, 0, 0));
  // rho 0.9 keeps 1 of 8 patches: 5 SSP blocks cannot be placed.
  const auto infeasible = std::find_if(cells.begin(), cells.end(), [](const SweepCell& c) {
    return c.strategy == MaskStrategy::ssp && c.rho == 0.9 && c.beta == 5;
  });
  REQUIRE(infeasible != cells.end());
  CHECK_FALSE(infeasible->report.has_value());
  CHECK_FALSE(infeasible->note.empty());

  REQUIRE(cells[0].report.has_value());
  PretrainConfig one = pc;
  one.mask.strategy = cells[0].strategy;
  one.mask.rho = cells[0].rho;
  one.mask.beta = cells[0].beta;
  one.train.seed = cells[0].seed;
  const auto again = pretrain_and_probe(sp, tiny_model(), one);
  CHECK(again.probe.report.accuracy == cells[0].report->accuracy);
  CHECK(again.probe.model.weights == pretrain_and_probe(sp, tiny_model(), one).probe.model.weights);
}

TEST_CASE("robustness harness: clean magnitude reproduces clean accuracy, curve lengths") {
  const auto train = tiny_data(24, 1);
  const auto test_set = tiny_data(16, 2);
  const auto model = init_model(tiny_model(), 3);
  const std::vector<NoiseKind> kinds{NoiseKind::gaussian, NoiseKind::dc_shift};
  const std::vector<double> mags{0.0, 0.5, 1.0};
  const auto pts = robustness_eval(model, train, test_set, kinds, mags, 4);
  CHECK(pts.size() == 6u);
  const double clean = probe_model(model, train, test_set).report.accuracy;
  for (const auto& p : pts)
    if (p.magnitude == 0.0) CHECK(p.report.accuracy == clean);
  const std::vector<double> bad{1.5};
  CHECK_THROWS_AS(robustness_eval(model, train, test_set, kinds, bad, 4), ConfigError);
}

TEST_CASE("probe encoder names parse") {
  CHECK(parse_probe_encoder("target") == ProbeEncoder::target);
  CHECK(to_string(ProbeEncoder::context) == "context");
  CHECK_THROWS_AS(parse_probe_encoder("teacher"), ConfigError);
}
