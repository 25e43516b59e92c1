#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cpqa/rng.hpp"
#include "cpqa/tensor.hpp"

namespace cpqa {

// Per-slot continuous prompts: learnable virtual-token seeds pushed through a
// per-slot MLP and prepended to the input embeddings. Prompts condition the
// encoder on the slot without changing the question text.
struct PromptConfig {
  std::size_t n_virtual = 8;   // virtual tokens per slot (full-scale preset: 60)
  std::size_t d_seed = 0;      // 0 = default to d_model
  std::size_t mlp_hidden = 0;  // 0 = default to d_model
  std::size_t d_model = 64;

  std::size_t seed_width() const { return d_seed == 0 ? d_model : d_seed; }
  std::size_t hidden_width() const { return mlp_hidden == 0 ? d_model : mlp_hidden; }
  void validate() const;
};

struct SlotPromptParams {
  Tensor seed;    // [n_virtual x d_seed]
  Tensor w1, b1;  // d_seed -> mlp_hidden
  Tensor w2, b2;  // mlp_hidden -> d_model
};

// One entry per registered slot, keyed by "<event_type>/<slot_name>".
// Entries share no parameters, so a step on one slot can never move another
// slot's prompts. std::map keeps iteration (and thus checkpoints) ordered.
struct PromptBank {
  std::map<std::string, SlotPromptParams> slots;

  bool has(const std::string& slot_key) const { return slots.count(slot_key) > 0; }
};

// Seeds ~ normal(0, 0.5) so prompts differentiate early; MLP weights use the
// encoder's normal(0, 0.02) init.
PromptBank init_prompt_bank(const std::vector<std::string>& slot_keys,
                            const PromptConfig& config, Rng& rng);

std::vector<std::pair<std::string, Tensor>> named_parameters(const PromptBank& bank);

std::size_t prompt_bank_parameter_count(const PromptBank& bank);

// MLP(seed), row-wise: gelu(seed * w1 + b1) * w2 + b2. The reparametrization
// is kept at inference time, so train and test computation are identical.
Tensor materialize_prompts(const std::string& slot_key, const PromptBank& bank,
                           const PromptConfig& config);

// Prompts first, then the original sequence. Prompt positions are valid for
// attention; they are never valid as answers (the pipeline's answer mask
// stays in the unprompted frame).
std::pair<Tensor, std::vector<bool>> prepend_prompts(const Tensor& prompts,
                                                     const Tensor& input_embeddings,
                                                     const std::vector<bool>& attn_mask);

}  // namespace cpqa
