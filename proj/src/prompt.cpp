#include "cpqa/prompt.hpp"

#include "cpqa/error.hpp"

namespace cpqa {

namespace {

constexpr double kSeedInitStd = 0.5;
constexpr double kMlpInitStd = 0.02;

Tensor init_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::vector<double> values(rows * cols);
  for (double& v : values) {
    v = rng.normal(0.0, stddev);
  }
  return Tensor::from_values({rows, cols}, std::move(values), true);
}

}  // namespace

void PromptConfig::validate() const {
  if (d_model == 0) {
    throw ConfigError("prompt d_model must be positive");
  }
}

PromptBank init_prompt_bank(const std::vector<std::string>& slot_keys,
                            const PromptConfig& config, Rng& rng) {
  config.validate();
  PromptBank bank;
  for (const std::string& key : slot_keys) {
    if (bank.has(key)) {
      throw RegistryError("duplicate slot key '" + key + "' in prompt bank");
    }
    SlotPromptParams p;
    p.seed = init_matrix(config.n_virtual, config.seed_width(), kSeedInitStd, rng);
    p.w1 = init_matrix(config.seed_width(), config.hidden_width(), kMlpInitStd, rng);
    p.b1 = Tensor::zeros({config.hidden_width()}, true);
    p.w2 = init_matrix(config.hidden_width(), config.d_model, kMlpInitStd, rng);
    p.b2 = Tensor::zeros({config.d_model}, true);
    bank.slots.emplace(key, std::move(p));
  }
  return bank;
}

std::vector<std::pair<std::string, Tensor>> named_parameters(const PromptBank& bank) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [key, p] : bank.slots) {
    const std::string prefix = "prompt." + key + ".";
    out.emplace_back(prefix + "seed", p.seed);
    out.emplace_back(prefix + "w1", p.w1);
    out.emplace_back(prefix + "b1", p.b1);
    out.emplace_back(prefix + "w2", p.w2);
    out.emplace_back(prefix + "b2", p.b2);
  }
  return out;
}

std::size_t prompt_bank_parameter_count(const PromptBank& bank) {
  std::size_t n = 0;
  for (const auto& [key, t] : named_parameters(bank)) {
    n += t.size();
  }
  return n;
}

Tensor materialize_prompts(const std::string& slot_key, const PromptBank& bank,
                           const PromptConfig& config) {
  auto it = bank.slots.find(slot_key);
  if (it == bank.slots.end()) {
    throw RegistryError("slot '" + slot_key + "' is not registered in the prompt bank");
  }
  const SlotPromptParams& p = it->second;
  (void)config;
  return add_bias(matmul(gelu(add_bias(matmul(p.seed, p.w1), p.b1)), p.w2), p.b2);
}

std::pair<Tensor, std::vector<bool>> prepend_prompts(const Tensor& prompts,
                                                     const Tensor& input_embeddings,
                                                     const std::vector<bool>& attn_mask) {
  if (input_embeddings.ndim() != 2) {
    throw ShapeError("prepend_prompts expects [L x d] input embeddings");
  }
  if (attn_mask.size() != input_embeddings.shape()[0]) {
    throw ShapeError("attention mask length does not match input length");
  }
  if (!prompts.defined() || prompts.shape()[0] == 0) {
    return {input_embeddings, attn_mask};
  }
  if (prompts.ndim() != 2 || prompts.shape()[1] != input_embeddings.shape()[1]) {
    throw ShapeError("prompt width does not match embedding width");
  }
  std::vector<bool> mask(prompts.shape()[0], true);
  mask.insert(mask.end(), attn_mask.begin(), attn_mask.end());
  return {concat_rows(prompts, input_embeddings), std::move(mask)};
}

}  // namespace cpqa
