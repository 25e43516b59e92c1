#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace cpqa {

namespace detail {
struct TensorNode;
}

// Dense row-major tensor of 64-bit reals with reverse-mode autodiff.
//
// A Tensor is a cheap handle onto a shared node; copies alias the same
// storage (parameters are shared between the model and the optimizer this
// way). Every differentiable op records its inputs and a backprop closure
// on the freshly created output node, so the recorded graph doubles as the
// tape: backward(loss) replays it once in reverse creation order.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
  static Tensor from_values(std::vector<std::size_t> shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t ndim() const;
  std::size_t size() const;
  std::size_t rows() const;  // shape[0] (1 for 1-d tensors used as a row)
  std::size_t cols() const;  // last dimension

  std::vector<double>& data();
  const std::vector<double>& data() const;
  double at(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;
  double& at(std::size_t i);
  double& at(std::size_t r, std::size_t c);
  double value() const;  // scalar convenience; throws unless size() == 1

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();   // allocate (if needed) and fill with zeros
  void clear_grad();  // drop the buffer entirely

  // Identity of the underlying node; used for cycle-free traversal and tests.
  const detail::TensorNode* node() const { return node_.get(); }

  friend void backward(const Tensor& loss);
  friend Tensor make_op_output(std::vector<std::size_t> shape, std::vector<double> values,
                               std::vector<Tensor> inputs,
                               std::function<void(detail::TensorNode&)> backprop);

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;
};

namespace detail {

struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until populated
  bool grad_allocated = false;
  std::uint64_t seq = 0;  // creation order; ancestors always have smaller seq
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;  // accumulates into parents' grads

  void ensure_grad();
};

}  // namespace detail

// While a guard is alive on this thread, ops do not record the tape and
// their outputs never require grad. Used for inference and finite-difference
// probes, where building a graph would only cost time and memory.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- differentiable ops ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);     // elementwise
Tensor scale(const Tensor& x, double c);
Tensor add_bias(const Tensor& x, const Tensor& bias);  // bias[n] added to each row of x[m x n]
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor gelu(const Tensor& x);  // exact erf form: 0.5 * x * (1 + erf(x / sqrt(2)))
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor cross_entropy(const Tensor& logits, std::size_t target);
Tensor sum(const Tensor& x);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& ids);
Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// Populates grads on every requires-grad tensor reachable from `loss`.
// Grads accumulate across calls until zero_grad()/clear_grad().
void backward(const Tensor& loss);

// Compares backward() grads against central finite differences.
//
// loss_fn must rebuild the forward pass from the current parameter values and
// return the (graph-attached) scalar loss. When coords_per_tensor is nonzero,
// only that many coordinates per tensor are probed, chosen by `seed`; zero
// probes every coordinate. Relative error uses max(|a|, |fd|, 1e-8) as the
// denominator. Returns the maximum relative error over all probed coordinates.
double grad_check(const std::function<Tensor()>& loss_fn,
                  const std::vector<std::pair<std::string, Tensor>>& params,
                  double step, std::size_t coords_per_tensor = 0,
                  std::uint64_t seed = 0);

}  // namespace cpqa
