#include "cpqa/span_head.hpp"

#include "cpqa/error.hpp"

namespace cpqa {

namespace {

constexpr double kInitStd = 0.02;

Tensor init_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<double> values(rows * cols);
  for (double& v : values) {
    v = rng.normal(0.0, kInitStd);
  }
  return Tensor::from_values({rows, cols}, std::move(values), true);
}

}  // namespace

SpanHeadParams init_span_head(std::size_t d_model, Rng& rng) {
  SpanHeadParams p;
  p.w_start = init_matrix(d_model, 1, rng);
  p.b_start = Tensor::zeros({1}, true);
  p.w_end = init_matrix(d_model, 1, rng);
  p.b_end = Tensor::zeros({1}, true);
  return p;
}

BinaryHeadParams init_binary_head(std::size_t d_model, Rng& rng) {
  BinaryHeadParams p;
  p.w = init_matrix(d_model, 2, rng);
  p.b = Tensor::zeros({2}, true);
  return p;
}

std::vector<std::pair<std::string, Tensor>> named_parameters(const SpanHeadParams& params) {
  return {{"span_head.w_start", params.w_start},
          {"span_head.b_start", params.b_start},
          {"span_head.w_end", params.w_end},
          {"span_head.b_end", params.b_end}};
}

std::vector<std::pair<std::string, Tensor>> named_parameters(const BinaryHeadParams& params) {
  return {{"binary_head.w", params.w}, {"binary_head.b", params.b}};
}

std::pair<Tensor, Tensor> span_logits(const Tensor& hidden, const SpanHeadParams& params) {
  if (hidden.ndim() != 2 || hidden.shape()[1] != params.w_start.shape()[0]) {
    throw ShapeError("span_logits expects [L x d_model] hidden states");
  }
  const std::size_t length = hidden.shape()[0];
  Tensor start = reshape(add_bias(matmul(hidden, params.w_start), params.b_start), {length});
  Tensor end = reshape(add_bias(matmul(hidden, params.w_end), params.b_end), {length});
  return {std::move(start), std::move(end)};
}

Tensor span_loss(const Tensor& start_logits, const Tensor& end_logits,
                 std::size_t gold_start, std::size_t gold_end) {
  if (gold_start > gold_end) {
    throw IndexError("gold span start " + std::to_string(gold_start) +
                     " is after end " + std::to_string(gold_end));
  }
  return add(cross_entropy(start_logits, gold_start), cross_entropy(end_logits, gold_end));
}

Tensor binary_logits(const Tensor& hidden_cls, const BinaryHeadParams& params) {
  Tensor row = hidden_cls;
  if (row.ndim() == 1) {
    row = reshape(row, {1, row.shape()[0]});
  }
  if (row.ndim() != 2 || row.shape()[0] != 1 || row.shape()[1] != params.w.shape()[0]) {
    throw ShapeError("binary_logits expects a single [CLS] hidden row");
  }
  return reshape(add_bias(matmul(row, params.w), params.b), {2});
}

SpanPrediction decode_span(const std::vector<double>& start_logits,
                           const std::vector<double>& end_logits,
                           const std::vector<bool>& answer_valid) {
  const std::size_t length = start_logits.size();
  if (end_logits.size() != length || answer_valid.size() != length) {
    throw ShapeError("decode_span inputs must share one length");
  }
  if (length == 0) {
    return {0, 0, 0.0};
  }
  // The missing sentinel (0, 0) is always a candidate and is lexicographically
  // smallest, so seeding with it and requiring strict improvement implements
  // the tie-break.
  SpanPrediction best{0, 0, start_logits[0] + end_logits[0]};
  for (std::size_t s = 1; s < length; ++s) {
    if (!answer_valid[s]) {
      continue;
    }
    for (std::size_t e = s; e < length; ++e) {
      if (!answer_valid[e]) {
        continue;
      }
      const double score = start_logits[s] + end_logits[e];
      if (score > best.score) {
        best = {s, e, score};
      }
    }
  }
  return best;
}

}  // namespace cpqa
