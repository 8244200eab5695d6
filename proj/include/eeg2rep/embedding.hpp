#pragma once

#include "eeg2rep/autodiff.hpp"
#include "eeg2rep/data.hpp"
#include "eeg2rep/types.hpp"

#include <cstdint>
#include <string>

namespace eeg2rep {

enum class Activation { gelu, identity };

struct EmbedConfig {
  int num_filters = 16;  // also the patch width d_x
  int temporal_kernel = 8;
  int pool_size = 4;
  Activation activation = Activation::gelu;

  int d_x() const { return num_filters; }
};

/// Throws ConfigError unless the config is usable for windows of length L.
void validate(const EmbedConfig& cfg, int length);

/// Number of patches produced for a window of `length` samples.
int patch_count(const EmbedConfig& cfg, int length);

/// l x d_x embedded patch sequence.
struct PatchSequence {
  Matrix patches;
  int length() const { return static_cast<int>(patches.rows()); }
};

template <class T>
struct EmbeddingParamsT {
  T depthwise;        // C x K temporal kernels, one per channel
  T depthwise_bias;   // C x 1
  T spatial;          // F x C channel-mixing filters
  T spatial_bias;     // F x 1
  T positional;       // l x F learned position table

  template <class F, class... S>
  static void zip(const std::string& prefix, F&& f, S&&... s) {
    f(prefix + "depthwise", s.depthwise...);
    f(prefix + "depthwise_bias", s.depthwise_bias...);
    f(prefix + "spatial", s.spatial...);
    f(prefix + "spatial_bias", s.spatial_bias...);
    f(prefix + "positional", s.positional...);
  }
  template <class U>
  void resize_like(const EmbeddingParamsT<U>&) {}
};

using EmbeddingParams = EmbeddingParamsT<Matrix>;

/// Fan-in scaled uniform weights, zero biases, positional table uniform in
/// +-1/sqrt(F).
EmbeddingParams init_embedding(const EmbedConfig& cfg, int channels, int length, std::uint64_t seed);

/// Exact parameter count of init_embedding(cfg, channels, length, .).
std::size_t embedding_param_count(const EmbedConfig& cfg, int channels, int length);

/// Depthwise temporal conv -> channel mix -> activation -> max pool, then
/// + positional table. `samples` is C x L. With add_positional = false the
/// raw patch features are returned.
ad::Var embed(const EmbeddingParamsT<ad::Var>& params, const Matrix& samples, const EmbedConfig& cfg,
              bool add_positional = true);

PatchSequence embed(const EegWindow& window, const EmbeddingParams& params, const EmbedConfig& cfg);

}  // namespace eeg2rep
