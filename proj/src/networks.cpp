#include "eeg2rep/networks.hpp"

#include "eeg2rep/losses.hpp"
#include "eeg2rep/params.hpp"
#include "eeg2rep/rng.hpp"

#include <cmath>

namespace eeg2rep {

void validate(const EncoderConfig& cfg) {
  if (cfg.d_e < 1 || cfg.heads < 1 || cfg.layers < 1 || cfg.ffn_multiplier < 1) {
    throw ConfigError("encoder: d_e, heads, layers and ffn_multiplier must be >= 1");
  }
  if (cfg.d_e % cfg.heads != 0) {
    throw ConfigError("encoder: d_e " + std::to_string(cfg.d_e) + " is not divisible by heads " +
                      std::to_string(cfg.heads));
  }
}

void validate(const PredictorConfig& cfg, int d_e) {
  if (cfg.heads < 1 || cfg.layers < 1 || cfg.ffn_multiplier < 1) {
    throw ConfigError("predictor: heads, layers and ffn_multiplier must be >= 1");
  }
  if (d_e % cfg.heads != 0) throw ConfigError("predictor: d_e is not divisible by heads");
}

namespace {

Matrix uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double bound) {
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = uniform(rng, -bound, bound);
  return m;
}

/// Weight (in x out) scaled by 1/sqrt(in) and a zero 1 x out bias.
void init_linear(Rng& rng, Matrix& w, Matrix& b, int in, int out) {
  w = uniform_matrix(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in)));
  b = Matrix::Zero(1, out);
}

void init_norm(Matrix& gamma, Matrix& beta, int d) {
  gamma = Matrix::Ones(1, d);
  beta = Matrix::Zero(1, d);
}

std::size_t linear_count(std::size_t in, std::size_t out) { return in * out + out; }

}  // namespace

EncoderParams init_encoder(const EncoderConfig& cfg, int d_x, std::uint64_t seed) {
  validate(cfg);
  Rng rng(seed);
  const int d = cfg.d_e;
  const int ff = d * cfg.ffn_multiplier;
  EncoderParams p;
  if (d_x != d) {
    init_linear(rng, p.input_proj, p.input_proj_bias, d_x, d);
  } else {
    p.input_proj = Matrix(0, 0);
    p.input_proj_bias = Matrix(0, 0);
  }
  p.layers.resize(cfg.layers);
  for (auto& l : p.layers) {
    init_norm(l.ln1_gamma, l.ln1_beta, d);
    init_linear(rng, l.wq, l.bq, d, d);
    init_linear(rng, l.wk, l.bk, d, d);
    init_linear(rng, l.wv, l.bv, d, d);
    init_linear(rng, l.wo, l.bo, d, d);
    init_norm(l.ln2_gamma, l.ln2_beta, d);
    init_linear(rng, l.w1, l.b1, d, ff);
    init_linear(rng, l.w2, l.b2, ff, d);
  }
  init_norm(p.final_gamma, p.final_beta, d);
  return p;
}

PredictorParams init_predictor(const PredictorConfig& cfg, int d_e, int l, int output_dim, std::uint64_t seed) {
  validate(cfg, d_e);
  Rng rng(seed);
  const int d = d_e;
  const int ff = d * cfg.ffn_multiplier;
  const double table_bound = 1.0 / std::sqrt(static_cast<double>(d));
  PredictorParams p;
  p.mask_token = uniform_matrix(rng, 1, d, table_bound);
  p.positional = uniform_matrix(rng, l, d, table_bound);
  p.layers.resize(cfg.layers);
  for (auto& layer : p.layers) {
    init_norm(layer.lnq_gamma, layer.lnq_beta, d);
    init_norm(layer.lnkv_gamma, layer.lnkv_beta, d);
    init_linear(rng, layer.wq, layer.bq, d, d);
    init_linear(rng, layer.wk, layer.bk, d, d);
    init_linear(rng, layer.wv, layer.bv, d, d);
    init_linear(rng, layer.wo, layer.bo, d, d);
    init_norm(layer.ln2_gamma, layer.ln2_beta, d);
    init_linear(rng, layer.w1, layer.b1, d, ff);
    init_linear(rng, layer.w2, layer.b2, ff, d);
  }
  init_norm(p.final_gamma, p.final_beta, d);
  init_linear(rng, p.head_w, p.head_b, d, output_dim);
  return p;
}

ad::Var encode(const EncoderParamsT<ad::Var>& params, const ad::Var& tokens, const EncoderConfig& cfg) {
  ad::Var x = tokens;
  if (params.input_proj.value().size() > 0) {
    x = ad::linear(x, params.input_proj, params.input_proj_bias);
  } else if (x.cols() != cfg.d_e) {
    throw DataError("encoder: token width " + std::to_string(x.cols()) + " does not match d_e " +
                    std::to_string(cfg.d_e));
  }
  for (const auto& l : params.layers) {
    const ad::Var h = ad::layer_norm(x, l.ln1_gamma, l.ln1_beta);
    const ad::Var q = ad::linear(h, l.wq, l.bq);
    const ad::Var k = ad::linear(h, l.wk, l.bk);
    const ad::Var v = ad::linear(h, l.wv, l.bv);
    x = ad::add(x, ad::linear(ad::attention(q, k, v, cfg.heads), l.wo, l.bo));
    const ad::Var h2 = ad::layer_norm(x, l.ln2_gamma, l.ln2_beta);
    x = ad::add(x, ad::linear(ad::gelu(ad::linear(h2, l.w1, l.b1)), l.w2, l.b2));
  }
  return ad::layer_norm(x, params.final_gamma, params.final_beta);
}

Matrix encode_target(const Matrix& patches, const EncoderParams& params, const EncoderConfig& cfg, double eps) {
  ad::Tape tape(false);
  const auto vars = bind(tape, params);
  return normalize_rows(encode(vars, tape.constant(patches), cfg).value(), eps);
}

Matrix encode_context(const Matrix& patches, std::span<const int> preserved, const EncoderParams& params,
                      const EncoderConfig& cfg) {
  if (preserved.empty()) throw DataError("encoder: empty context");
  ad::Tape tape(false);
  const auto vars = bind(tape, params);
  return encode(vars, ad::gather_rows(tape.constant(patches), preserved), cfg).value();
}

ad::Var predict(const PredictorParamsT<ad::Var>& params, const ad::Var& context, std::span<const int> targets,
                const PredictorConfig& cfg) {
  if (targets.empty()) throw DataError("predictor: empty target block");
  if (context.cols() != params.mask_token.cols()) throw DataError("predictor: context width mismatch");
  ad::Var q = ad::add_row(ad::gather_rows(params.positional, targets), params.mask_token);
  for (const auto& l : params.layers) {
    const ad::Var hq = ad::layer_norm(q, l.lnq_gamma, l.lnq_beta);
    const ad::Var hkv = ad::layer_norm(context, l.lnkv_gamma, l.lnkv_beta);
    const ad::Var attn = ad::attention(ad::linear(hq, l.wq, l.bq), ad::linear(hkv, l.wk, l.bk),
                                       ad::linear(hkv, l.wv, l.bv), cfg.heads);
    q = ad::add(q, ad::linear(attn, l.wo, l.bo));
    const ad::Var h2 = ad::layer_norm(q, l.ln2_gamma, l.ln2_beta);
    q = ad::add(q, ad::linear(ad::gelu(ad::linear(h2, l.w1, l.b1)), l.w2, l.b2));
  }
  return ad::linear(ad::layer_norm(q, params.final_gamma, params.final_beta), params.head_w, params.head_b);
}

Matrix predict(const Matrix& context, std::span<const int> targets, const PredictorParams& params,
               const PredictorConfig& cfg) {
  ad::Tape tape(false);
  const auto vars = bind(tape, params);
  return predict(vars, tape.constant(context), targets, cfg).value();
}

std::size_t encoder_block_param_count(const EncoderConfig& cfg) {
  const std::size_t d = cfg.d_e;
  const std::size_t ff = d * cfg.ffn_multiplier;
  const std::size_t per_layer = 2 * d + 4 * linear_count(d, d) + 2 * d + linear_count(d, ff) + linear_count(ff, d);
  return per_layer * cfg.layers;
}

ParamCounts count_params(const EmbedConfig& embed, const EncoderConfig& encoder, const PredictorConfig& predictor,
                         int channels, int length, int output_dim) {
  ParamCounts c;
  const std::size_t d = encoder.d_e;
  const std::size_t l = patch_count(embed, length);
  c.embedding = embedding_param_count(embed, channels, length);
  const std::size_t proj = embed.d_x() == encoder.d_e ? 0 : linear_count(embed.d_x(), d);
  c.context = proj + encoder_block_param_count(encoder) + 2 * d;
  c.target = c.context;
  const std::size_t ff = d * predictor.ffn_multiplier;
  const std::size_t pred_layer = 4 * d + 4 * linear_count(d, d) + 2 * d + linear_count(d, ff) + linear_count(ff, d);
  c.predictor = d + l * d + pred_layer * predictor.layers + 2 * d + linear_count(d, output_dim);
  return c;
}

}  // namespace eeg2rep
