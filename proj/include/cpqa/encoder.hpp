#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "cpqa/rng.hpp"
#include "cpqa/tensor.hpp"

namespace cpqa {

// Bidirectional transformer encoder (RoBERTa-family layout) at a
// configurable, intentionally small scale.
struct EncoderConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t vocab_size = 0;  // filled in from the built vocabulary
  std::size_t max_seq_len = 128;
  double layer_norm_eps = 1e-5;
  // Sublayer order. false = post-norm (the BERT/RoBERTa lineage default),
  // true = pre-norm.
  bool pre_norm = false;

  void validate() const;
};

struct EncoderLayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // attention projections
  Tensor w1, b1, w2, b2;                  // feed-forward
  Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
};

struct EncoderParams {
  Tensor token_embedding;     // [vocab_size x d_model]
  Tensor position_embedding;  // [max_seq_len x d_model]
  std::vector<EncoderLayerParams> layers;
};

// Weight matrices ~ normal(0, 0.02), biases zero, norm gains one.
EncoderParams init_encoder(const EncoderConfig& config, Rng& rng);

// Parameters in a fixed order, named "encoder.<...>"; this order also defines
// the checkpoint layout.
std::vector<std::pair<std::string, Tensor>> named_parameters(const EncoderParams& params);

// Token + learned absolute position embedding per position. Positions count
// from 0 at the first token of `token_ids`; callers that prepend prompts must
// leave room under max_seq_len themselves.
Tensor embed_sequence(const std::vector<std::size_t>& token_ids,
                      const EncoderConfig& config, const EncoderParams& params);

// One attention + feed-forward block. Masked positions (attn_mask false)
// receive exactly zero attention weight from every query. When attn_weights
// is given it receives one [L x L] tensor per head.
Tensor encoder_layer(const Tensor& hidden, const std::vector<bool>& attn_mask,
                     const EncoderLayerParams& layer, const EncoderConfig& config,
                     std::vector<Tensor>* attn_weights = nullptr);

// n_layers applications of encoder_layer; identity for a 0-layer config.
Tensor encode(const Tensor& input_embeddings, const std::vector<bool>& attn_mask,
              const EncoderConfig& config, const EncoderParams& params);

}  // namespace cpqa
