#include "eeg2rep/embedding.hpp"

#include "eeg2rep/params.hpp"
#include "eeg2rep/rng.hpp"

#include <cmath>

namespace eeg2rep {

void validate(const EmbedConfig& cfg, int length) {
  if (cfg.num_filters < 1) throw ConfigError("embedding: num_filters must be >= 1");
  if (cfg.temporal_kernel < 1) throw ConfigError("embedding: temporal_kernel must be >= 1");
  if (cfg.pool_size < 1) throw ConfigError("embedding: pool_size must be >= 1");
  if (length < 1 || length % cfg.pool_size != 0) {
    throw ConfigError("embedding: pool_size " + std::to_string(cfg.pool_size) + " must divide window length " +
                      std::to_string(length));
  }
}

int patch_count(const EmbedConfig& cfg, int length) {
  validate(cfg, length);
  return length / cfg.pool_size;
}

namespace {

Matrix uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double bound) {
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = uniform(rng, -bound, bound);
  return m;
}

}  // namespace

EmbeddingParams init_embedding(const EmbedConfig& cfg, int channels, int length, std::uint64_t seed) {
  if (channels < 1) throw ConfigError("embedding: channels must be >= 1");
  const int l = patch_count(cfg, length);
  const int f = cfg.num_filters;
  Rng rng(seed);
  EmbeddingParams p;
  p.depthwise = uniform_matrix(rng, channels, cfg.temporal_kernel, 1.0 / std::sqrt(cfg.temporal_kernel));
  p.depthwise_bias = Matrix::Zero(channels, 1);
  p.spatial = uniform_matrix(rng, f, channels, 1.0 / std::sqrt(channels));
  p.spatial_bias = Matrix::Zero(f, 1);
  p.positional = uniform_matrix(rng, l, f, 1.0 / std::sqrt(f));
  return p;
}

std::size_t embedding_param_count(const EmbedConfig& cfg, int channels, int length) {
  const std::size_t c = channels, k = cfg.temporal_kernel, f = cfg.num_filters;
  const std::size_t l = patch_count(cfg, length);
  return c * k + c + f * c + f + l * f;
}

ad::Var embed(const EmbeddingParamsT<ad::Var>& params, const Matrix& samples, const EmbedConfig& cfg,
              bool add_positional) {
  if (samples.rows() != params.depthwise.rows()) {
    throw DataError("embedding: window has " + std::to_string(samples.rows()) + " channels, parameters expect " +
                    std::to_string(params.depthwise.rows()));
  }
  const int l = patch_count(cfg, static_cast<int>(samples.cols()));
  if (l != params.positional.rows()) {
    throw DataError("embedding: window length " + std::to_string(samples.cols()) + " gives " + std::to_string(l) +
                    " patches, parameters expect " + std::to_string(params.positional.rows()));
  }
  ad::Var conv = ad::depthwise_conv1d(samples, params.depthwise, params.depthwise_bias);
  ad::Var mixed = ad::channel_mix(conv, params.spatial, params.spatial_bias);
  if (cfg.activation == Activation::gelu) mixed = ad::gelu(mixed);
  ad::Var patches = ad::max_pool_rows(mixed, cfg.pool_size);
  return add_positional ? ad::add(patches, params.positional) : patches;
}

PatchSequence embed(const EegWindow& window, const EmbeddingParams& params, const EmbedConfig& cfg) {
  ad::Tape tape(false);
  const auto vars = bind(tape, params);
  return {embed(vars, window.samples, cfg).value()};
}

}  // namespace eeg2rep
