#include <doctest.h>

#include "eeg2rep/embedding.hpp"
#include "eeg2rep/losses.hpp"
#include "eeg2rep/networks.hpp"
#include "eeg2rep/params.hpp"
#include "eeg2rep/training.hpp"

#include <numeric>

using namespace eeg2rep;

namespace {

Matrix randn(Rng& rng, int r, int c) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

EncoderConfig small_encoder() {
  EncoderConfig e;
  e.d_e = 8;
  e.heads = 2;
  e.layers = 2;
  return e;
}

// Counts parameters by walking declared shapes: every tensor's rows * cols.
template <class P>
std::size_t walk(const P& p) {
  std::size_t n = 0;
  P::zip("", [&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.rows() * m.cols()); }, p);
  return n;
}

}  // namespace

TEST_CASE("embedding: patch count and output shape") {
  EmbedConfig cfg;
  CHECK(patch_count(cfg, 128) == 32);
  cfg.pool_size = 4;
  const auto params = init_embedding(cfg, 4, 128, 1);
  CHECK(params.positional.rows() == 32);
  CHECK(params.positional.cols() == 16);
  SynthConfig sc;
  sc.n = 1;
  const auto w = synthesize_dataset(sc).windows[0];
  const auto ps = embed(w, params, cfg);
  CHECK(ps.length() == 32);
  CHECK(ps.patches.cols() == 16);
  CHECK(ps.patches.allFinite());
  cfg.pool_size = 3;
  CHECK_THROWS_AS(validate(cfg, 128), ConfigError);
}

TEST_CASE("parameter counts agree with a shape-walking oracle") {
  for (int layers : {1, 2, 4}) {
    for (int d_e : {8, 16}) {
      EmbedConfig emb;
      EncoderConfig enc;
      enc.d_e = d_e;
      enc.heads = 2;
      enc.layers = layers;
      PredictorConfig pred;
      pred.heads = 2;
      pred.layers = layers;
      ModelConfig mc;
      mc.channels = 3;
      mc.length = 64;
      mc.embed = emb;
      mc.encoder = enc;
      mc.predictor = pred;
      const auto model = init_model(mc, 5);
      const auto counts = count_params(emb, enc, pred, 3, 64, mc.predictor_output_dim());
      CHECK(counts.embedding == walk(model.trainable.embedding));
      CHECK(counts.context == walk(model.trainable.context));
      CHECK(counts.target == walk(model.target));
      CHECK(counts.predictor == walk(model.trainable.predictor));
      CHECK(counts.context == counts.target);
      CHECK(counts.embedding == embedding_param_count(emb, 3, 64));
      CHECK(counts.trainable() == parameter_count(model.trainable));
    }
  }
}

TEST_CASE("doubling encoder depth doubles the block parameter count") {
  EncoderConfig e = small_encoder();
  const auto one = encoder_block_param_count(e);
  e.layers *= 2;
  CHECK(encoder_block_param_count(e) == 2 * one);
}

TEST_CASE("target representations are row-standardized") {
  Rng rng(1);
  const auto enc = small_encoder();
  const auto params = init_encoder(enc, 8, 2);
  const Matrix y = encode_target(randn(rng, 10, 8), params, enc);
  CHECK(y.rows() == 10);
  CHECK(y.cols() == 8);
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    CHECK(std::abs(y.row(i).mean()) < 1e-6);
    CHECK(std::abs(y.row(i).array().square().mean() - 1.0) < 1e-4);
  }
}

TEST_CASE("encoder is permutation equivariant over patches") {
  Rng rng(2);
  const auto enc = small_encoder();
  const auto params = init_encoder(enc, 8, 3);
  const Matrix x = randn(rng, 6, 8);
  const std::vector<int> perm{3, 0, 5, 1, 4, 2};
  Matrix xp(6, 8);
  for (int i = 0; i < 6; ++i) xp.row(i) = x.row(perm[i]);
  const Matrix y = encode_target(x, params, enc);
  const Matrix yp = encode_target(xp, params, enc);
  for (int i = 0; i < 6; ++i) CHECK((yp.row(i) - y.row(perm[i])).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("context encoder: shape, ignores masked patches, matches the unnormalized full pass") {
  Rng rng(3);
  const auto enc = small_encoder();
  const auto params = init_encoder(enc, 8, 4);
  Matrix x = randn(rng, 12, 8);
  const std::vector<int> keep{0, 2, 3, 7, 11};
  const Matrix r = encode_context(x, keep, params, enc);
  CHECK(r.rows() == 5);
  CHECK(r.cols() == 8);
  x.row(5).setConstant(100.0);
  CHECK(encode_context(x, keep, params, enc) == r);

  std::vector<int> all(12);
  std::iota(all.begin(), all.end(), 0);
  const Matrix full = encode_context(x, all, params, enc);
  CHECK((normalize_rows(full) - encode_target(x, params, enc)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(encode_context(x, std::vector<int>{}, params, enc), DataError);
}

TEST_CASE("predictor: shape, position dependence, key-order invariance") {
  Rng rng(4);
  PredictorConfig pc;
  pc.heads = 2;
  pc.layers = 2;
  const auto params = init_predictor(pc, 8, 16, 8, 5);
  const Matrix ctx = randn(rng, 6, 8);
  std::vector<int> targets(10);
  std::iota(targets.begin(), targets.end(), 3);
  const Matrix y = predict(ctx, targets, params, pc);
  CHECK(y.rows() == 10);
  CHECK(y.cols() == 8);
  for (int i = 1; i < 10; ++i) CHECK((y.row(i) - y.row(0)).norm() > 1e-6);

  Matrix shuffled(6, 8);
  const std::vector<int> perm{5, 3, 1, 0, 2, 4};
  for (int i = 0; i < 6; ++i) shuffled.row(i) = ctx.row(perm[i]);
  CHECK((predict(shuffled, targets, params, pc) - y).cwiseAbs().maxCoeff() < 1e-10);
  CHECK_THROWS_AS(predict(ctx, std::vector<int>{}, params, pc), DataError);
}

TEST_CASE("predictor queries carry no target content") {
  // Two contexts that agree everywhere give identical predictions regardless
  // of what the hidden target patches contain.
  Rng rng(6);
  ModelConfig mc;
  mc.channels = 2;
  mc.length = 32;
  mc.embed.num_filters = 8;
  mc.encoder = small_encoder();
  mc.predictor.heads = 2;
  mc.predictor.layers = 1;
  const auto model = init_model(mc, 1);
  Matrix patches = randn(rng, 8, 8);
  const std::vector<int> keep{0, 1, 2, 3};
  const std::vector<int> hidden{5, 6};
  const Matrix a = predict(encode_context(patches, keep, model.trainable.context, mc.encoder), hidden,
                           model.trainable.predictor, mc.predictor);
  patches.row(5) *= -3.0;
  patches.row(6).setConstant(9.0);
  const Matrix b = predict(encode_context(patches, keep, model.trainable.context, mc.encoder), hidden,
                           model.trainable.predictor, mc.predictor);
  CHECK(a == b);
}

TEST_CASE("network config validation") {
  EncoderConfig e;
  e.d_e = 10;
  e.heads = 4;
  CHECK_THROWS_AS(validate(e), ConfigError);
  e.heads = 0;
  CHECK_THROWS_AS(validate(e), ConfigError);
  PredictorConfig p;
  p.heads = 3;
  CHECK_THROWS_AS(validate(p, 16), ConfigError);
}

TEST_CASE("unequal patch width and d_e are bridged by a projection") {
  ModelConfig mc;
  mc.channels = 2;
  mc.length = 32;
  mc.embed.num_filters = 12;
  mc.encoder = small_encoder();
  mc.predictor.heads = 2;
  mc.predictor.layers = 1;
  const auto model = init_model(mc, 2);
  CHECK(model.trainable.context.input_proj.rows() == 12);
  CHECK(model.trainable.context.input_proj.cols() == 8);
  Rng rng(1);
  const Matrix y = encode_target(randn(rng, 8, 12), model.target, mc.encoder);
  CHECK(y.cols() == 8);
}
