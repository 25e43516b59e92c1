#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "cpqa/rng.hpp"
#include "cpqa/tensor.hpp"

namespace cpqa {

// Start/end span scoring over encoded positions. Position 0 is the [CLS]
// slot; decoding the (0, 0) pair there means "missing".
struct SpanHeadParams {
  Tensor w_start, b_start;  // [d_model x 1], [1]
  Tensor w_end, b_end;
};

// Two-way yes/no head over the [CLS] hidden state, used for binary slots.
// Class 0 = NO, class 1 = YES.
struct BinaryHeadParams {
  Tensor w, b;  // [d_model x 2], [2]
};

SpanHeadParams init_span_head(std::size_t d_model, Rng& rng);
BinaryHeadParams init_binary_head(std::size_t d_model, Rng& rng);

std::vector<std::pair<std::string, Tensor>> named_parameters(const SpanHeadParams& params);
std::vector<std::pair<std::string, Tensor>> named_parameters(const BinaryHeadParams& params);

struct SpanPrediction {
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
  double score = 0.0;

  bool is_missing() const { return start == 0 && end == 0; }
  std::size_t token_count() const { return end - start + 1; }
};

// Per-position start and end scores, each [L].
std::pair<Tensor, Tensor> span_logits(const Tensor& hidden, const SpanHeadParams& params);

// cross_entropy(start) + cross_entropy(end) against the gold pair.
Tensor span_loss(const Tensor& start_logits, const Tensor& end_logits,
                 std::size_t gold_start, std::size_t gold_end);

// Yes/no logits [2] from the [CLS] hidden row.
Tensor binary_logits(const Tensor& hidden_cls, const BinaryHeadParams& params);

// Argmax of start_logits[s] + end_logits[e] over (0, 0) plus every pair
// 1 <= s <= e with both endpoints answer-valid. Ties break to the smallest
// (s, e) lexicographically; an empty candidate set decodes as missing.
SpanPrediction decode_span(const std::vector<double>& start_logits,
                           const std::vector<double>& end_logits,
                           const std::vector<bool>& answer_valid);

}  // namespace cpqa
