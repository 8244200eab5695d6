#include <doctest.h>

#include "eeg2rep/checkpoint.hpp"

#include "test_util.hpp"

#include <fstream>

using namespace eeg2rep;

namespace {

struct Tiny {
  ModelConfig model;
  PretrainConfig pre;
  EegDataset train, val;
};

Tiny tiny_setup() {
  Tiny t;
  SynthConfig sc;
  sc.n = 24;
  sc.channels = 2;
  sc.length = 32;
  sc.seed = 9;
  const auto ds = synthesize_dataset(sc);
  SplitSpec sp;
  sp.mode = SplitMode::random;
  sp.train_fraction = 0.7;
  sp.val_fraction = 0.2;
  sp.test_fraction = 0.1;
  auto s = split(ds, sp, 1);
  t.train = std::move(s.train);
  t.val = std::move(s.val);
  t.model.channels = 2;
  t.model.length = 32;
  t.model.embed.num_filters = 8;
  t.model.embed.pool_size = 4;
  t.model.encoder.d_e = 8;
  t.model.encoder.heads = 2;
  t.model.encoder.layers = 1;
  t.model.predictor.heads = 2;
  t.model.predictor.layers = 1;
  t.pre.train.batch_size = 6;
  t.pre.train.epochs = 4;
  t.pre.train.seed = 21;
  t.pre.mask.beta = 2;
  return t;
}

Checkpoint trained_checkpoint(const Tiny& t, int epochs) {
  Trainer tr(t.pre, init_model(t.model, 5), t.train, t.val);
  tr.run({}, epochs);
  return {Json{{"note", "test"}}, t.pre, tr.state()};
}

std::string bytes(const std::filesystem::path& p) { return test::read_file(p); }

void overwrite(const std::filesystem::path& p, const std::string& data) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << data;
}

std::vector<std::string> log_rows(Trainer& tr, std::optional<int> epochs) {
  std::vector<std::string> rows;
  Trainer::Hooks h;
  h.on_step = [&](const TrainLogRow& r) { rows.push_back(format_log_row(r)); };
  tr.run(h, epochs);
  return rows;
}

}  // namespace

TEST_CASE("save, load, save is byte-identical") {
  const auto t = tiny_setup();
  const auto dir = test::temp_dir("ckpt_roundtrip");
  const Checkpoint ck = trained_checkpoint(t, 1);
  save_checkpoint(dir / "a.ckpt", ck);
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(dir / "b.ckpt", back);
  CHECK(bytes(dir / "a.ckpt") == bytes(dir / "b.ckpt"));
  CHECK_FALSE(std::filesystem::exists(dir / "a.ckpt.tmp"));

  CHECK(back.run_config == ck.run_config);
  CHECK(back.state.step == ck.state.step);
  CHECK(back.state.epoch == 1);
  CHECK(back.state.best_val == ck.state.best_val);
  CHECK(back.state.target_passes == ck.state.target_passes);
  CHECK(back.state.model.trainable.context.layers[0].wq == ck.state.model.trainable.context.layers[0].wq);
  CHECK(back.state.model.target.final_gamma == ck.state.model.target.final_gamma);
  Rng a = ck.state.rng, b = back.state.rng;
  for (int i = 0; i < 10; ++i) CHECK(a() == b());
}

TEST_CASE("damaged checkpoints are rejected with I/O errors") {
  const auto t = tiny_setup();
  const auto dir = test::temp_dir("ckpt_damage");
  save_checkpoint(dir / "good.ckpt", trained_checkpoint(t, 1));
  const std::string good = bytes(dir / "good.ckpt");
  const auto p = dir / "bad.ckpt";

  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);

  std::string s = good;
  s[0] = 'X';
  overwrite(p, s);
  CHECK_THROWS_WITH_AS(load_checkpoint(p), doctest::Contains("bad header"), IoError);

  s = good;
  s[8] = 7;  // version field follows the 8-byte magic
  overwrite(p, s);
  CHECK_THROWS_WITH_AS(load_checkpoint(p), doctest::Contains("version"), IoError);

  s = good;
  s[s.size() / 2] ^= 0x10;
  overwrite(p, s);
  CHECK_THROWS_AS(load_checkpoint(p), IoError);

  for (std::size_t cut : {std::size_t{4}, good.size() / 3, good.size() - 1}) {
    overwrite(p, good.substr(0, cut));
    CHECK_THROWS_AS(load_checkpoint(p), IoError);
  }
  overwrite(p, good + "x");
  CHECK_THROWS_AS(load_checkpoint(p), IoError);
}

TEST_CASE("resuming from a checkpoint continues bit-exactly") {
  const auto t = tiny_setup();
  const auto dir = test::temp_dir("ckpt_resume");

  Trainer full(t.pre, init_model(t.model, 5), t.train, t.val);
  const auto all_rows = log_rows(full, std::nullopt);

  Trainer first(t.pre, init_model(t.model, 5), t.train, t.val);
  auto rows = log_rows(first, 2);
  save_checkpoint(dir / "mid.ckpt", {Json::object(), t.pre, first.state()});
  Checkpoint ck = load_checkpoint(dir / "mid.ckpt");
  Trainer second(ck.pretrain, std::move(ck.state), t.train, t.val);
  const auto rest = log_rows(second, std::nullopt);
  rows.insert(rows.end(), rest.begin(), rest.end());

  CHECK(rows == all_rows);
  CHECK(second.state().model.trainable.predictor.head_w == full.state().model.trainable.predictor.head_w);
  CHECK(second.state().model.target.layers[0].w1 == full.state().model.target.layers[0].w1);
}
