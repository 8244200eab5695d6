#include <doctest.h>

#include "eeg2rep/losses.hpp"
#include "eeg2rep/params.hpp"
#include "eeg2rep/training.hpp"

#include <algorithm>
#include <vector>

using namespace eeg2rep;

namespace {

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.channels = 2;
  mc.length = 32;
  mc.embed.num_filters = 8;
  mc.embed.pool_size = 4;
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

PretrainConfig tiny_pretrain(int epochs, int batch) {
  PretrainConfig pc;
  pc.mask.rho = 0.5;
  pc.mask.beta = 2;
  pc.train.epochs = epochs;
  pc.train.batch_size = batch;
  pc.train.seed = 9;
  return pc;
}

// Direct evaluation of the objective from the forward functions: each target
// block predicted on its own, the per-view block mean, the mean over views,
// the mean over samples, and the VICReg terms averaged over views.
LossBreakdown oracle_objective(const ModelState& model, const std::vector<const EegWindow*>& batch,
                               const std::vector<std::uint64_t>& seeds, const PretrainConfig& cfg) {
  const auto& mc = model.config;
  const int views = cfg.mask.num_views;
  std::vector<std::vector<RowVector>> pooled(views);
  double rec = 0.0;
  int with_loss = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto ps = embed(*batch[b], model.trainable.embedding, mc.embed);
    const Matrix y = regression_targets(ps.patches, *batch[b], model);
    const auto plans = make_views(mc.patches(), cfg.mask, seeds[b]);
    std::vector<double> per_view;
    for (int q = 0; q < views; ++q) {
      const Matrix r = encode_context(ps.patches, plans[q].preserved, model.trainable.context, mc.encoder);
      pooled[q].push_back(r.colwise().mean());
      std::vector<Matrix> t, p;
      for (const auto& li : plans[q].loss_indices) {
        if (li.empty()) continue;
        Matrix yt(static_cast<Eigen::Index>(li.size()), y.cols());
        for (std::size_t j = 0; j < li.size(); ++j) yt.row(j) = y.row(li[j]);
        t.push_back(yt);
        p.push_back(predict(r, li, model.trainable.predictor, mc.predictor));
      }
      // A view whose target blocks are all inside its context has nothing to
      // predict and is left out of the view mean.
      if (!t.empty()) per_view.push_back(reconstruction_loss(t, p));
    }
    if (per_view.empty()) continue;
    rec += multi_view_loss(per_view);
    ++with_loss;
  }
  rec /= static_cast<double>(with_loss);
  double var = 0.0, cov = 0.0;
  for (int q = 0; q < views; ++q) {
    Matrix r(static_cast<Eigen::Index>(batch.size()), mc.encoder.d_e);
    for (std::size_t b = 0; b < batch.size(); ++b) r.row(b) = pooled[q][b];
    var += variance_loss(r, cfg.loss.variance_target, cfg.loss.eps);
    cov += covariance_loss(r);
  }
  return total_loss(rec, var / views, cov / views, cfg.loss);
}

double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

bool grad_is_nonzero(const Trainable& g) {
  double sq = 0.0;
  Trainable::zip("", [&](const std::string&, const Matrix& m) { sq += m.squaredNorm(); }, g);
  return sq > 0.0;
}

}  // namespace

TEST_CASE("EMA schedule is linear then flat") {
  EmaSchedule s;
  s.tau_n = 100;
  CHECK(s.tau(0) == s.tau0);
  CHECK(s.tau(50) == doctest::Approx((s.tau0 + s.tau_e) / 2));
  CHECK(s.tau(100) == doctest::Approx(s.tau_e));
  CHECK(s.tau(1000) == doctest::Approx(s.tau_e));
  for (long t = 1; t < 120; ++t) CHECK(s.tau(t) >= s.tau(t - 1));
  s.tau0 = 0.5;
  s.tau_e = 0.4;
  CHECK_THROWS_AS(validate(s), ConfigError);
}

TEST_CASE("EMA update: fixed point, full copy, affine blend") {
  const auto model = init_model(tiny_model(), 1);
  const auto other = init_model(tiny_model(), 2);
  EmaSchedule keep;
  keep.tau0 = keep.tau_e = 1.0;
  keep.tau_n = 1;
  EncoderParams t = model.target;
  ema_update(t, other.trainable.context, 0, keep);
  CHECK(t.layers[0].wq == model.target.layers[0].wq);

  EmaSchedule copy;
  copy.tau0 = copy.tau_e = 0.0;
  copy.tau_n = 1;
  ema_update(t, other.trainable.context, 0, copy);
  CHECK(t.layers[0].wq == other.trainable.context.layers[0].wq);

  EmaSchedule half;
  half.tau0 = half.tau_e = 0.25;
  half.tau_n = 1;
  EncoderParams u = model.target;
  ema_update(u, other.trainable.context, 3, half);
  EncoderParams::zip(
      "",
      [](const std::string&, const Matrix& out, const Matrix& a, const Matrix& b) {
        CHECK(out.rows() == a.rows());
        CHECK(max_abs(out - (0.25 * a + 0.75 * b)) < 1e-15);
      },
      u, model.target, other.trainable.context);
}

TEST_CASE("cosine learning rate") {
  const long total = 250;
  CHECK(cosine_lr(1e-3, 0, total) == 1e-3);
  CHECK(cosine_lr(1e-3, total - 1, total) <= 1e-5);
  for (long s = 1; s < total; ++s) CHECK(cosine_lr(1e-3, s, total) <= cosine_lr(1e-3, s - 1, total));
  CHECK(cosine_lr(1e-3, 0, 1) == 1e-3);
}

TEST_CASE("steps per epoch drop a trailing singleton batch") {
  CHECK(Trainer::steps_per_epoch(10, 4) == 3);
  CHECK(Trainer::steps_per_epoch(9, 4) == 2);
  CHECK(Trainer::steps_per_epoch(8, 4) == 2);
}

TEST_CASE("batch objective equals the direct forward evaluation") {
  const auto ds = tiny_data(12, 3);
  for (auto space : {TargetSpace::latent, TargetSpace::input}) {
    ModelConfig mc = tiny_model();
    mc.target_space = space;
    const auto model = init_model(mc, 4);
    for (int views : {1, 2, 3}) {
      PretrainConfig pc = tiny_pretrain(1, 4);
      pc.mask.num_views = views;
      for (int trial = 0; trial < 8; ++trial) {
        std::vector<const EegWindow*> batch;
        std::vector<std::uint64_t> seeds;
        for (int i = 0; i < 4; ++i) {
          batch.push_back(&ds.windows[(trial + 3 * i) % ds.size()]);
          seeds.push_back(derive_seed(77, {static_cast<std::uint64_t>(trial), static_cast<std::uint64_t>(i)}));
        }
        const auto got = batch_objective(model, batch, seeds, pc);
        const auto want = oracle_objective(model, batch, seeds, pc);
        CHECK(std::abs(got.loss.rec - want.rec) <= 1e-10 * std::abs(want.rec));
        CHECK(std::abs(got.loss.var - want.var) <= 1e-10 * std::max(1e-12, std::abs(want.var)));
        CHECK(std::abs(got.loss.cov - want.cov) <= 1e-10 * std::max(1e-12, std::abs(want.cov)));
        CHECK(std::abs(got.loss.total - want.total) <= 1e-10 * std::abs(want.total));
        CHECK(got.target_passes == 4);
      }
    }
  }
}

TEST_CASE("gradient evaluation does not change the loss value") {
  const auto ds = tiny_data(4, 5);
  const auto model = init_model(tiny_model(), 3);
  std::vector<const EegWindow*> batch;
  for (const auto& w : ds.windows) batch.push_back(&w);
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4};
  const auto pc = tiny_pretrain(1, 4);
  Trainable g = zeros_like(model.trainable);
  const double with = batch_objective(model, batch, seeds, pc, &g).loss.total;
  CHECK(with == batch_objective(model, batch, seeds, pc).loss.total);
  CHECK(grad_is_nonzero(g));
  CHECK_THROWS(batch_objective(model, std::vector<const EegWindow*>{batch[0]}, std::vector<std::uint64_t>{1}, pc));
}

TEST_CASE("a training step touches the target encoder only through EMA") {
  const auto train = tiny_data(4, 6);
  const auto val = tiny_data(4, 7);
  const auto model = init_model(tiny_model(), 2);
  PretrainConfig pc = tiny_pretrain(1, 4);
  pc.ema.tau0 = 0.9;
  pc.ema.tau_e = 0.99;
  const EncoderParams before = model.target;
  Trainer trainer(pc, model, train, val);
  double tau = -1.0;
  Trainer::Hooks hooks;
  hooks.on_step = [&](const TrainLogRow& row) { tau = row.tau; };
  trainer.run_epoch(hooks);
  REQUIRE(tau == doctest::Approx(0.9));
  const auto& after = trainer.state().model;
  EncoderParams::zip(
      "",
      [&](const std::string& name, const Matrix& t_after, const Matrix& t_before, const Matrix& ctx_after) {
        CAPTURE(name);
        CHECK(max_abs(t_after - (tau * t_before + (1.0 - tau) * ctx_after)) == 0.0);
      },
      after.target, before, after.trainable.context);
  CHECK(after.trainable.context.layers[0].wq != before.layers[0].wq);
}

TEST_CASE("one target pass per sample regardless of the number of views") {
  const auto train = tiny_data(10, 1);
  const auto val = tiny_data(4, 2);
  for (int views : {1, 2, 4}) {
    PretrainConfig pc = tiny_pretrain(2, 4);
    pc.mask.num_views = views;
    const auto res = pretrain(train, val, tiny_model(), pc);
    CHECK(res.state.samples_seen == 20);
    CHECK(res.state.target_passes == res.state.samples_seen);
  }
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
  const auto train = tiny_data(12, 1);
  const auto val = tiny_data(4, 2);
  const auto pc = tiny_pretrain(2, 4);
  const auto a = pretrain(train, val, tiny_model(), pc);
  const auto b = pretrain(train, val, tiny_model(), pc);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(format_log_row(a.log[i]) == format_log_row(b.log[i]));
  auto pc2 = pc;
  pc2.train.seed = 10;
  CHECK(format_log_row(pretrain(train, val, tiny_model(), pc2).log[0]) != format_log_row(a.log[0]));
}

TEST_CASE("training log format") {
  CHECK(train_log_header() == "step,lr,tau,rec,var,cov,total,val_total,rep_std_min");
  TrainLogRow row;
  row.step = 3;
  row.lr = 0.5;
  row.loss.total = 1.0;
  CHECK(format_log_row(row) == "3,0.5,0,0,0,0,1,,0");
  row.val_total = 2.0;
  CHECK(format_log_row(row) == "3,0.5,0,0,0,0,1,2,0");
}

TEST_CASE("a constant encoder is flagged as collapsed and activates the variance hinge") {
  const auto ds = tiny_data(8, 4);
  ModelState model = init_model(tiny_model(), 5);
  model.trainable.context.final_gamma.setZero();  // encoder output == final_beta for every input
  std::vector<const EegWindow*> batch;
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    batch.push_back(&ds.windows[i]);
    seeds.push_back(i);
  }
  PretrainConfig pc = tiny_pretrain(1, 8);
  pc.loss.mu = 0.0;
  pc.loss.gamma = 0.0;
  const auto off = batch_objective(model, batch, seeds, pc);
  CHECK(off.rep_std_min < kCollapseStd);
  CHECK(off.loss.total == doctest::Approx(pc.loss.lambda * off.loss.rec));

  const auto on = batch_objective(model, batch, seeds, tiny_pretrain(1, 8));
  CHECK(on.loss.var > 0.5);
  CHECK(on.rep_std_min < kCollapseStd);

  const auto healthy = batch_objective(init_model(tiny_model(), 5), batch, seeds, tiny_pretrain(1, 8));
  CHECK(healthy.rep_std_min > kCollapseStd);
}

TEST_CASE("early stopping halts at the first epoch that fails to improve") {
  const auto train = tiny_data(16, 1);
  const auto val = tiny_data(8, 2);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    PretrainConfig pc = tiny_pretrain(8, 4);
    pc.train.seed = seed;
    pc.train.lr0 = 3e-2;
    pc.train.early_stop_patience = 1;
    Trainer trainer(pc, init_model(tiny_model(), seed), train, val);
    std::vector<double> vals;
    Trainer::Hooks hooks;
    hooks.on_step = [&](const TrainLogRow& row) {
      if (row.val_total) vals.push_back(*row.val_total);
    };
    trainer.run(hooks);
    int expected_stop = -1;
    double best = vals.front();
    for (std::size_t e = 1; e < vals.size(); ++e) {
      if (!(vals[e] < best)) {
        expected_stop = static_cast<int>(e) + 1;
        break;
      }
      best = vals[e];
    }
    if (expected_stop > 0) {
      CHECK(trainer.state().stopped_early);
      CHECK(trainer.state().epoch == expected_stop);
    } else {
      CHECK_FALSE(trainer.state().stopped_early);
      CHECK(trainer.state().epoch == 8);
    }
    CHECK(*trainer.state().best_val == *std::min_element(vals.begin(), vals.end()));
  }
}

TEST_CASE("short training reduces the reconstruction loss") {
  const auto train = tiny_data(32, 1);
  const auto val = tiny_data(8, 2);
  PretrainConfig pc = tiny_pretrain(15, 8);
  pc.train.lr0 = 3e-3;
  const auto res = pretrain(train, val, tiny_model(), pc);
  const double first = res.log.front().loss.rec;
  double last = 0.0;
  for (std::size_t i = res.log.size() - 4; i < res.log.size(); ++i) last += res.log[i].loss.rec / 4;
  CHECK(last < first);
}

TEST_CASE("trainer input validation and resume schedule check") {
  const auto train = tiny_data(8, 1);
  const auto one = tiny_data(1, 2);
  const auto pc = tiny_pretrain(1, 4);
  CHECK_THROWS_AS(Trainer(pc, init_model(tiny_model(), 1), train, one), DataError);
  Trainer t(pc, init_model(tiny_model(), 1), train, train);
  auto other = pc;
  other.train.epochs = 3;
  CHECK_THROWS_AS(Trainer(other, t.state(), train, train), ConfigError);
  auto bad = pc;
  bad.train.batch_size = 1;
  CHECK_THROWS_AS(Trainer(bad, init_model(tiny_model(), 1), train, train), ConfigError);
  CHECK(parse_target_space("input") == TargetSpace::input);
  CHECK_THROWS_AS(parse_target_space("pixels"), ConfigError);
}
