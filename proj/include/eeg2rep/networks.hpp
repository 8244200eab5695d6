#pragma once

#include "eeg2rep/autodiff.hpp"
#include "eeg2rep/embedding.hpp"
#include "eeg2rep/types.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace eeg2rep {

struct EncoderConfig {
  int d_e = 16;
  int heads = 8;
  int layers = 4;
  int ffn_multiplier = 4;
};

struct PredictorConfig {
  int heads = 8;
  int layers = 4;
  int ffn_multiplier = 4;
};

void validate(const EncoderConfig& cfg);
void validate(const PredictorConfig& cfg, int d_e);

/// Pre-norm self-attention block.
template <class T>
struct EncoderLayerT {
  T ln1_gamma, ln1_beta;
  T wq, bq, wk, bk, wv, bv, wo, bo;
  T ln2_gamma, ln2_beta;
  T w1, b1, w2, b2;

  template <class F, class... S>
  static void zip(const std::string& p, F&& f, S&&... s) {
    f(p + "ln1_gamma", s.ln1_gamma...);
    f(p + "ln1_beta", s.ln1_beta...);
    f(p + "wq", s.wq...);
    f(p + "bq", s.bq...);
    f(p + "wk", s.wk...);
    f(p + "bk", s.bk...);
    f(p + "wv", s.wv...);
    f(p + "bv", s.bv...);
    f(p + "wo", s.wo...);
    f(p + "bo", s.bo...);
    f(p + "ln2_gamma", s.ln2_gamma...);
    f(p + "ln2_beta", s.ln2_beta...);
    f(p + "w1", s.w1...);
    f(p + "b1", s.b1...);
    f(p + "w2", s.w2...);
    f(p + "b2", s.b2...);
  }
};

/// Context and target encoders share this layout. `input_proj` is 0 x 0
/// unless the patch width differs from d_e.
template <class T>
struct EncoderParamsT {
  T input_proj, input_proj_bias;
  std::vector<EncoderLayerT<T>> layers;
  T final_gamma, final_beta;

  template <class F, class First, class... S>
  static void zip(const std::string& p, F&& f, First&& first, S&&... s) {
    f(p + "input_proj", first.input_proj, s.input_proj...);
    f(p + "input_proj_bias", first.input_proj_bias, s.input_proj_bias...);
    for (std::size_t i = 0; i < first.layers.size(); ++i) {
      EncoderLayerT<T>::zip(p + "layers." + std::to_string(i) + ".", f, first.layers[i], s.layers[i]...);
    }
    f(p + "final_gamma", first.final_gamma, s.final_gamma...);
    f(p + "final_beta", first.final_beta, s.final_beta...);
  }
  template <class U>
  void resize_like(const EncoderParamsT<U>& o) {
    layers.resize(o.layers.size());
  }
};

/// Pre-norm cross-attention block: queries attend over context keys/values.
template <class T>
struct PredictorLayerT {
  T lnq_gamma, lnq_beta, lnkv_gamma, lnkv_beta;
  T wq, bq, wk, bk, wv, bv, wo, bo;
  T ln2_gamma, ln2_beta;
  T w1, b1, w2, b2;

  template <class F, class... S>
  static void zip(const std::string& p, F&& f, S&&... s) {
    f(p + "lnq_gamma", s.lnq_gamma...);
    f(p + "lnq_beta", s.lnq_beta...);
    f(p + "lnkv_gamma", s.lnkv_gamma...);
    f(p + "lnkv_beta", s.lnkv_beta...);
    f(p + "wq", s.wq...);
    f(p + "bq", s.bq...);
    f(p + "wk", s.wk...);
    f(p + "bk", s.bk...);
    f(p + "wv", s.wv...);
    f(p + "bv", s.bv...);
    f(p + "wo", s.wo...);
    f(p + "bo", s.bo...);
    f(p + "ln2_gamma", s.ln2_gamma...);
    f(p + "ln2_beta", s.ln2_beta...);
    f(p + "w1", s.w1...);
    f(p + "b1", s.b1...);
    f(p + "w2", s.w2...);
    f(p + "b2", s.b2...);
  }
};

template <class T>
struct PredictorParamsT {
  T mask_token;  // 1 x d_e shared base vector
  T positional;  // l x d_e, added to the mask token per target position
  std::vector<PredictorLayerT<T>> layers;
  T final_gamma, final_beta;
  T head_w, head_b;  // d_e -> output width

  template <class F, class First, class... S>
  static void zip(const std::string& p, F&& f, First&& first, S&&... s) {
    f(p + "mask_token", first.mask_token, s.mask_token...);
    f(p + "positional", first.positional, s.positional...);
    for (std::size_t i = 0; i < first.layers.size(); ++i) {
      PredictorLayerT<T>::zip(p + "layers." + std::to_string(i) + ".", f, first.layers[i], s.layers[i]...);
    }
    f(p + "final_gamma", first.final_gamma, s.final_gamma...);
    f(p + "final_beta", first.final_beta, s.final_beta...);
    f(p + "head_w", first.head_w, s.head_w...);
    f(p + "head_b", first.head_b, s.head_b...);
  }
  template <class U>
  void resize_like(const PredictorParamsT<U>& o) {
    layers.resize(o.layers.size());
  }
};

using EncoderParams = EncoderParamsT<Matrix>;
using PredictorParams = PredictorParamsT<Matrix>;

EncoderParams init_encoder(const EncoderConfig& cfg, int d_x, std::uint64_t seed);
/// `output_dim` is d_e for latent targets, C * pool_size for input-space
/// targets.
PredictorParams init_predictor(const PredictorConfig& cfg, int d_e, int l, int output_dim, std::uint64_t seed);

/// Transformer encoder over token rows (n x d_x) -> n x d_e.
ad::Var encode(const EncoderParamsT<ad::Var>& params, const ad::Var& tokens, const EncoderConfig& cfg);

/// Full-sequence pass followed by per-row standardization. No tape; targets
/// are constants for every loss built from them.
Matrix encode_target(const Matrix& patches, const EncoderParams& params, const EncoderConfig& cfg,
                     double eps = 1e-5);

/// Encodes only the rows of `patches` listed in `preserved`.
Matrix encode_context(const Matrix& patches, std::span<const int> preserved, const EncoderParams& params,
                      const EncoderConfig& cfg);

/// Cross-attention predictor: queries are mask_token + positional(j) for j in
/// `targets`, keys/values come from `context`. Returns |targets| x output_dim.
ad::Var predict(const PredictorParamsT<ad::Var>& params, const ad::Var& context, std::span<const int> targets,
                const PredictorConfig& cfg);

Matrix predict(const Matrix& context, std::span<const int> targets, const PredictorParams& params,
               const PredictorConfig& cfg);

struct ParamCounts {
  std::size_t embedding = 0;
  std::size_t context = 0;
  std::size_t target = 0;
  std::size_t predictor = 0;
  std::size_t trainable() const { return embedding + context + predictor; }
};

/// Closed-form parameter counts for a model over `channels` x `length` windows.
ParamCounts count_params(const EmbedConfig& embed, const EncoderConfig& encoder, const PredictorConfig& predictor,
                         int channels, int length, int output_dim);

/// Parameters of the transformer blocks alone (no embeddings/tables/heads).
std::size_t encoder_block_param_count(const EncoderConfig& cfg);

}  // namespace eeg2rep
