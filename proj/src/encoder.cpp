#include "cpqa/encoder.hpp"

#include <cmath>

#include "cpqa/error.hpp"

namespace cpqa {

namespace {

constexpr double kInitStd = 0.02;
// Additive attention bias for masked keys. exp(-1e9) underflows to exactly
// zero, so masked positions contribute nothing to either the weights or the
// softmax denominator.
constexpr double kMaskBias = -1e9;

Tensor init_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<double> values(rows * cols);
  for (double& v : values) {
    v = rng.normal(0.0, kInitStd);
  }
  return Tensor::from_values({rows, cols}, std::move(values), true);
}

Tensor init_zeros(std::size_t n) { return Tensor::zeros({n}, true); }
Tensor init_ones(std::size_t n) { return Tensor::full({n}, 1.0, true); }

}  // namespace

void EncoderConfig::validate() const {
  // n_layers == 0 is allowed (identity encoder); everything else is positive.
  if (d_model == 0 || n_heads == 0 || d_ff == 0 || max_seq_len == 0) {
    throw ConfigError("encoder config fields must be positive");
  }
  if (layer_norm_eps <= 0.0) {
    throw ConfigError("layer_norm_eps must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) +
                      " is not divisible by n_heads " + std::to_string(n_heads));
  }
}

EncoderParams init_encoder(const EncoderConfig& config, Rng& rng) {
  config.validate();
  if (config.vocab_size == 0) {
    throw ConfigError("encoder vocab_size must be set before initialization");
  }
  EncoderParams p;
  p.token_embedding = init_matrix(config.vocab_size, config.d_model, rng);
  p.position_embedding = init_matrix(config.max_seq_len, config.d_model, rng);
  p.layers.resize(config.n_layers);
  for (auto& layer : p.layers) {
    layer.wq = init_matrix(config.d_model, config.d_model, rng);
    layer.bq = init_zeros(config.d_model);
    layer.wk = init_matrix(config.d_model, config.d_model, rng);
    layer.bk = init_zeros(config.d_model);
    layer.wv = init_matrix(config.d_model, config.d_model, rng);
    layer.bv = init_zeros(config.d_model);
    layer.wo = init_matrix(config.d_model, config.d_model, rng);
    layer.bo = init_zeros(config.d_model);
    layer.w1 = init_matrix(config.d_model, config.d_ff, rng);
    layer.b1 = init_zeros(config.d_ff);
    layer.w2 = init_matrix(config.d_ff, config.d_model, rng);
    layer.b2 = init_zeros(config.d_model);
    layer.ln1_gamma = init_ones(config.d_model);
    layer.ln1_beta = init_zeros(config.d_model);
    layer.ln2_gamma = init_ones(config.d_model);
    layer.ln2_beta = init_zeros(config.d_model);
  }
  return p;
}

std::vector<std::pair<std::string, Tensor>> named_parameters(const EncoderParams& params) {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("encoder.token_embedding", params.token_embedding);
  out.emplace_back("encoder.position_embedding", params.position_embedding);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    const std::string prefix = "encoder.layer" + std::to_string(i) + ".";
    out.emplace_back(prefix + "wq", l.wq);
    out.emplace_back(prefix + "bq", l.bq);
    out.emplace_back(prefix + "wk", l.wk);
    out.emplace_back(prefix + "bk", l.bk);
    out.emplace_back(prefix + "wv", l.wv);
    out.emplace_back(prefix + "bv", l.bv);
    out.emplace_back(prefix + "wo", l.wo);
    out.emplace_back(prefix + "bo", l.bo);
    out.emplace_back(prefix + "w1", l.w1);
    out.emplace_back(prefix + "b1", l.b1);
    out.emplace_back(prefix + "w2", l.w2);
    out.emplace_back(prefix + "b2", l.b2);
    out.emplace_back(prefix + "ln1_gamma", l.ln1_gamma);
    out.emplace_back(prefix + "ln1_beta", l.ln1_beta);
    out.emplace_back(prefix + "ln2_gamma", l.ln2_gamma);
    out.emplace_back(prefix + "ln2_beta", l.ln2_beta);
  }
  return out;
}

Tensor embed_sequence(const std::vector<std::size_t>& token_ids,
                      const EncoderConfig& config, const EncoderParams& params) {
  for (std::size_t id : token_ids) {
    if (id >= config.vocab_size) {
      throw IndexError("token id " + std::to_string(id) + " out of range for vocab of " +
                       std::to_string(config.vocab_size));
    }
  }
  if (token_ids.size() > config.max_seq_len) {
    throw LengthError("sequence of " + std::to_string(token_ids.size()) +
                      " tokens exceeds max_seq_len " + std::to_string(config.max_seq_len));
  }
  std::vector<std::size_t> positions(token_ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    positions[i] = i;
  }
  return add(gather_rows(params.token_embedding, token_ids),
             gather_rows(params.position_embedding, positions));
}

namespace {

Tensor attention_mask_bias(const std::vector<bool>& attn_mask) {
  const std::size_t n = attn_mask.size();
  std::vector<double> bias(n * n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    if (!attn_mask[k]) {
      for (std::size_t q = 0; q < n; ++q) {
        bias[q * n + k] = kMaskBias;
      }
    }
  }
  return Tensor::from_values({n, n}, std::move(bias), false);
}

Tensor multi_head_attention(const Tensor& hidden, const std::vector<bool>& attn_mask,
                            const EncoderLayerParams& layer, const EncoderConfig& config,
                            std::vector<Tensor>* attn_weights) {
  const std::size_t d_head = config.d_model / config.n_heads;
  const Tensor q = add_bias(matmul(hidden, layer.wq), layer.bq);
  const Tensor k = add_bias(matmul(hidden, layer.wk), layer.bk);
  const Tensor v = add_bias(matmul(hidden, layer.wv), layer.bv);
  const Tensor mask_bias = attention_mask_bias(attn_mask);
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(d_head));

  std::vector<Tensor> heads;
  heads.reserve(config.n_heads);
  for (std::size_t h = 0; h < config.n_heads; ++h) {
    const Tensor qh = slice_cols(q, h * d_head, d_head);
    const Tensor kh = slice_cols(k, h * d_head, d_head);
    const Tensor vh = slice_cols(v, h * d_head, d_head);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
    scores = add(scores, mask_bias);
    const Tensor weights = softmax(scores, 1);
    if (attn_weights != nullptr) {
      attn_weights->push_back(weights);
    }
    heads.push_back(matmul(weights, vh));
  }
  return add_bias(matmul(concat_cols(heads), layer.wo), layer.bo);
}

Tensor feed_forward(const Tensor& hidden, const EncoderLayerParams& layer) {
  return add_bias(matmul(gelu(add_bias(matmul(hidden, layer.w1), layer.b1)), layer.w2),
                  layer.b2);
}

}  // namespace

Tensor encoder_layer(const Tensor& hidden, const std::vector<bool>& attn_mask,
                     const EncoderLayerParams& layer, const EncoderConfig& config,
                     std::vector<Tensor>* attn_weights) {
  if (hidden.ndim() != 2 || hidden.shape()[1] != config.d_model) {
    throw ShapeError("encoder_layer expects [L x d_model] hidden states");
  }
  if (attn_mask.size() != hidden.shape()[0]) {
    throw ShapeError("attention mask length " + std::to_string(attn_mask.size()) +
                     " does not match sequence length " +
                     std::to_string(hidden.shape()[0]));
  }
  if (config.pre_norm) {
    const Tensor h1 = add(hidden, multi_head_attention(
        layer_norm(hidden, layer.ln1_gamma, layer.ln1_beta, config.layer_norm_eps),
        attn_mask, layer, config, attn_weights));
    return add(h1, feed_forward(
        layer_norm(h1, layer.ln2_gamma, layer.ln2_beta, config.layer_norm_eps), layer));
  }
  const Tensor h1 = layer_norm(
      add(hidden, multi_head_attention(hidden, attn_mask, layer, config, attn_weights)),
      layer.ln1_gamma, layer.ln1_beta, config.layer_norm_eps);
  return layer_norm(add(h1, feed_forward(h1, layer)), layer.ln2_gamma, layer.ln2_beta,
                    config.layer_norm_eps);
}

Tensor encode(const Tensor& input_embeddings, const std::vector<bool>& attn_mask,
              const EncoderConfig& config, const EncoderParams& params) {
  Tensor h = input_embeddings;
  for (const auto& layer : params.layers) {
    h = encoder_layer(h, attn_mask, layer, config);
  }
  return h;
}

}  // namespace cpqa
