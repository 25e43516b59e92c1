#include "cpqa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_set>

#include "cpqa/error.hpp"
#include "cpqa/rng.hpp"

namespace cpqa {

namespace {

thread_local std::uint64_t g_next_seq = 1;
thread_local bool g_grad_enabled = true;

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) {
      os << "x";
    }
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void require(bool cond, const std::string& msg) {
  if (!cond) {
    throw ShapeError(msg);
  }
}

}  // namespace

namespace detail {

void TensorNode::ensure_grad() {
  if (!grad_allocated) {
    grad.assign(data.size(), 0.0);
    grad_allocated = true;
  }
}

}  // namespace detail

using detail::TensorNode;

// ---- Tensor handle ----

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  return from_values(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
  const std::size_t n = shape_product(shape);
  return from_values(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_values(std::vector<std::size_t> shape, std::vector<double> values,
                           bool requires_grad) {
  const std::size_t n = shape_product(shape);
  if (values.empty()) {
    values.assign(n, 0.0);
  }
  if (values.size() != n) {
    throw ShapeError("tensor data size " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  node->seq = g_next_seq++;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

const std::vector<std::size_t>& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::ndim() const { return node_->shape.size(); }
std::size_t Tensor::size() const { return node_->data.size(); }

std::size_t Tensor::rows() const {
  return node_->shape.size() >= 2 ? node_->shape[0] : 1;
}

std::size_t Tensor::cols() const {
  return node_->shape.empty() ? 1 : node_->shape.back();
}

std::vector<double>& Tensor::data() { return node_->data; }
const std::vector<double>& Tensor::data() const { return node_->data; }

double Tensor::at(std::size_t i) const { return node_->data.at(i); }
double& Tensor::at(std::size_t i) { return node_->data.at(i); }
double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->data.at(r * cols() + c);
}
double& Tensor::at(std::size_t r, std::size_t c) {
  return node_->data.at(r * cols() + c);
}

double Tensor::value() const {
  if (size() != 1) {
    throw ContractError("value() requires a scalar tensor, got shape " +
                        shape_str(node_->shape));
  }
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool value) { node_->requires_grad = value; }

bool Tensor::has_grad() const { return node_ && node_->grad_allocated; }

std::vector<double>& Tensor::grad() {
  if (!has_grad()) {
    throw ContractError("tensor has no grad buffer; call zero_grad() or backward() first");
  }
  return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) {
    throw ContractError("tensor has no grad buffer; call zero_grad() or backward() first");
  }
  return node_->grad;
}

void Tensor::zero_grad() { node_->ensure_grad(); std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

void Tensor::clear_grad() {
  node_->grad.clear();
  node_->grad_allocated = false;
}

// ---- graph plumbing ----

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor make_op_output(std::vector<std::size_t> shape, std::vector<double> values,
                      std::vector<Tensor> inputs,
                      std::function<void(TensorNode&)> backprop) {
  Tensor out = Tensor::from_values(std::move(shape), std::move(values), false);
  bool track = g_grad_enabled;
  if (track) {
    track = false;
    for (const Tensor& t : inputs) {
      if (t.requires_grad()) {
        track = true;
        break;
      }
    }
  }
  if (track) {
    out.node_->requires_grad = true;
    out.node_->parents.reserve(inputs.size());
    for (Tensor& t : inputs) {
      out.node_->parents.push_back(std::move(t.node_));
    }
    out.node_->backprop = std::move(backprop);
  }
  return out;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() requires a defined scalar loss");
  }
  TensorNode* root = loss.node_.get();
  if (!root->requires_grad) {
    return;  // nothing on the tape depends on this value
  }

  // Collect every node reachable from the loss. Sorting by creation order
  // yields a valid reverse-topological order because inputs always predate
  // their outputs, and it is independent of pointer values, so traversal is
  // bit-deterministic across runs.
  std::vector<TensorNode*> nodes;
  std::unordered_set<const TensorNode*> seen;
  std::vector<TensorNode*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    TensorNode* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& p : n->parents) {
      if (seen.insert(p.get()).second) {
        stack.push_back(p.get());
      }
    }
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const TensorNode* a, const TensorNode* b) { return a->seq > b->seq; });

  for (TensorNode* n : nodes) {
    if (n->requires_grad) {
      n->ensure_grad();
    }
  }
  root->grad[0] += 1.0;

  for (TensorNode* n : nodes) {
    if (n->backprop) {
      n->backprop(*n);
    }
  }
}

// ---- ops ----

namespace {

// Most backprop closures follow the same pattern: read self.grad, accumulate
// into whichever parents require grad.
bool wants_grad(const TensorNode& self, std::size_t parent) {
  return self.parents[parent]->requires_grad;
}

void check_2d(const Tensor& t, const char* what) {
  require(t.ndim() == 2, std::string(what) + " requires a 2-d tensor, got " +
                             shape_str(t.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  const std::size_t m = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const std::size_t n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = ad[i * k + kk];
      if (aik == 0.0) {
        continue;
      }
      const double* brow = bd.data() + kk * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        orow[j] += aik * brow[j];
      }
    }
  }
  return make_op_output(
      {m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& self) {
        const auto& g = self.grad;
        const auto& ad = self.parents[0]->data;
        const auto& bd = self.parents[1]->data;
        if (wants_grad(self, 0)) {
          auto& da = self.parents[0]->grad;
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t kk = 0; kk < k; ++kk) {
              double acc = 0.0;
              const double* grow = g.data() + i * n;
              const double* brow = bd.data() + kk * n;
              for (std::size_t j = 0; j < n; ++j) {
                acc += grow[j] * brow[j];
              }
              da[i * k + kk] += acc;
            }
          }
        }
        if (wants_grad(self, 1)) {
          auto& db = self.parents[1]->grad;
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g.data() + i * n;
            for (std::size_t kk = 0; kk < k; ++kk) {
              const double aik = ad[i * k + kk];
              if (aik == 0.0) {
                continue;
              }
              double* dbrow = db.data() + kk * n;
              for (std::size_t j = 0; j < n; ++j) {
                dbrow[j] += aik * grow[j];
              }
            }
          }
        }
      });
}

Tensor transpose(const Tensor& x) {
  check_2d(x, "transpose");
  const std::size_t m = x.shape()[0];
  const std::size_t n = x.shape()[1];
  std::vector<double> out(m * n);
  const auto& xd = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out[j * m + i] = xd[i * n + j];
    }
  }
  return make_op_output({n, m}, std::move(out), {x}, [m, n](TensorNode& self) {
    if (!wants_grad(self, 0)) {
      return;
    }
    auto& dx = self.parents[0]->grad;
    const auto& g = self.grad;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        dx[i * n + j] += g[j * m + i];
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add shapes differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.data()[i] + b.data()[i];
  }
  return make_op_output(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (wants_grad(self, p)) {
        auto& d = self.parents[p]->grad;
        for (std::size_t i = 0; i < d.size(); ++i) {
          d[i] += self.grad[i];
        }
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("sub shapes differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.data()[i] - b.data()[i];
  }
  return make_op_output(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
    if (wants_grad(self, 0)) {
      auto& d = self.parents[0]->grad;
      for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] += self.grad[i];
      }
    }
    if (wants_grad(self, 1)) {
      auto& d = self.parents[1]->grad;
      for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] -= self.grad[i];
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul shapes differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.data()[i] * b.data()[i];
  }
  return make_op_output(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
    const auto& ad = self.parents[0]->data;
    const auto& bd = self.parents[1]->data;
    if (wants_grad(self, 0)) {
      auto& d = self.parents[0]->grad;
      for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] += self.grad[i] * bd[i];
      }
    }
    if (wants_grad(self, 1)) {
      auto& d = self.parents[1]->grad;
      for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] += self.grad[i] * ad[i];
      }
    }
  });
}

Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x.data()[i] * c;
  }
  return make_op_output(x.shape(), std::move(out), {x}, [c](TensorNode& self) {
    if (!wants_grad(self, 0)) {
      return;
    }
    auto& d = self.parents[0]->grad;
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] += self.grad[i] * c;
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  check_2d(x, "add_bias");
  require(bias.ndim() == 1, "add_bias requires a 1-d bias, got " + shape_str(bias.shape()));
  const std::size_t m = x.shape()[0];
  const std::size_t n = x.shape()[1];
  if (bias.shape()[0] != n) {
    throw ShapeError("add_bias width mismatch: " + shape_str(x.shape()) + " vs " +
                     shape_str(bias.shape()));
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = x.data()[i * n + j] + bias.data()[j];
    }
  }
  return make_op_output({m, n}, std::move(out), {x, bias}, [m, n](TensorNode& self) {
    if (wants_grad(self, 0)) {
      auto& dx = self.parents[0]->grad;
      for (std::size_t i = 0; i < dx.size(); ++i) {
        dx[i] += self.grad[i];
      }
    }
    if (wants_grad(self, 1)) {
      auto& db = self.parents[1]->grad;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          db[j] += self.grad[i * n + j];
        }
      }
    }
  });
}

namespace {

// Describes the 1-d slices a row/column-wise op iterates over.
struct SliceIter {
  std::size_t count;   // number of slices
  std::size_t len;     // elements per slice
  std::size_t base;    // offset multiplier per slice
  std::size_t stride;  // element stride within a slice
};

SliceIter slices_for_axis(const Tensor& x, std::size_t axis) {
  if (x.ndim() == 1) {
    require(axis == 0, "axis out of range for 1-d tensor");
    return {1, x.shape()[0], 0, 1};
  }
  check_2d(x, "softmax");
  const std::size_t r = x.shape()[0];
  const std::size_t c = x.shape()[1];
  require(axis < 2, "axis out of range for 2-d tensor");
  if (axis == 1) {
    return {r, c, c, 1};  // row slices
  }
  return {c, r, 1, c};  // column slices
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  const SliceIter it = slices_for_axis(x, axis);
  std::vector<double> out(x.size());
  const auto& xd = x.data();
  for (std::size_t s = 0; s < it.count; ++s) {
    const std::size_t off = s * it.base;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < it.len; ++i) {
      mx = std::max(mx, xd[off + i * it.stride]);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < it.len; ++i) {
      const double e = std::exp(xd[off + i * it.stride] - mx);
      out[off + i * it.stride] = e;
      total += e;
    }
    for (std::size_t i = 0; i < it.len; ++i) {
      out[off + i * it.stride] /= total;
    }
  }
  return make_op_output(x.shape(), std::move(out), {x}, [it](TensorNode& self) {
    if (!wants_grad(self, 0)) {
      return;
    }
    auto& dx = self.parents[0]->grad;
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t s = 0; s < it.count; ++s) {
      const std::size_t off = s * it.base;
      double dot = 0.0;
      for (std::size_t i = 0; i < it.len; ++i) {
        const std::size_t idx = off + i * it.stride;
        dot += g[idx] * y[idx];
      }
      for (std::size_t i = 0; i < it.len; ++i) {
        const std::size_t idx = off + i * it.stride;
        dx[idx] += y[idx] * (g[idx] - dot);
      }
    }
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = std::numbers::sqrt2 / 2.0;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  }
  return make_op_output(x.shape(), std::move(out), {x},
                        [inv_sqrt_2pi](TensorNode& self) {
    if (!wants_grad(self, 0)) {
      return;
    }
    constexpr double inv_sqrt2 = std::numbers::sqrt2 / 2.0;
    auto& dx = self.parents[0]->grad;
    const auto& xd = self.parents[0]->data;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double v = xd[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      dx[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t r = x.rows();
  const std::size_t c = x.cols();
  require(x.ndim() <= 2, "layer_norm requires a 1-d or 2-d tensor");
  require(gamma.ndim() == 1 && gamma.shape()[0] == c,
          "layer_norm gamma must match the normalized width " + std::to_string(c));
  require(beta.ndim() == 1 && beta.shape()[0] == c,
          "layer_norm beta must match the normalized width " + std::to_string(c));
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(r);
  const auto& xd = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = xd.data() + i * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      mean += row[j];
    }
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double dv = row[j] - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mean) * inv;
      xhat[i * c + j] = h;
      out[i * c + j] = gamma.data()[j] * h + beta.data()[j];
    }
  }
  return make_op_output(
      x.shape(), std::move(out), {x, gamma, beta},
      [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorNode& self) {
        const auto& g = self.grad;
        const auto& gamma = self.parents[1]->data;
        if (wants_grad(self, 1)) {
          auto& dgamma = self.parents[1]->grad;
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
              dgamma[j] += g[i * c + j] * xhat[i * c + j];
            }
          }
        }
        if (wants_grad(self, 2)) {
          auto& dbeta = self.parents[2]->grad;
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
              dbeta[j] += g[i * c + j];
            }
          }
        }
        if (wants_grad(self, 0)) {
          auto& dx = self.parents[0]->grad;
          for (std::size_t i = 0; i < r; ++i) {
            double mean_dxhat = 0.0;
            double mean_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = g[i * c + j] * gamma[j];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xhat[i * c + j];
            }
            mean_dxhat /= static_cast<double>(c);
            mean_dxhat_xhat /= static_cast<double>(c);
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = g[i * c + j] * gamma[j];
              dx[i * c + j] += inv_std[i] *
                  (dxh - mean_dxhat - xhat[i * c + j] * mean_dxhat_xhat);
            }
          }
        }
      });
}

Tensor cross_entropy(const Tensor& logits, std::size_t target) {
  require(logits.ndim() == 1, "cross_entropy requires 1-d logits, got " +
                                  shape_str(logits.shape()));
  const std::size_t n = logits.shape()[0];
  if (target >= n) {
    throw IndexError("cross_entropy target " + std::to_string(target) +
                     " out of range for " + std::to_string(n) + " classes");
  }
  const auto& z = logits.data();
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : z) {
    mx = std::max(mx, v);
  }
  double total = 0.0;
  for (double v : z) {
    total += std::exp(v - mx);
  }
  const double lse = mx + std::log(total);
  std::vector<double> probs(n);
  for (std::size_t i = 0; i < n; ++i) {
    probs[i] = std::exp(z[i] - lse);
  }
  const double loss = lse - z[target];
  return make_op_output({1}, {loss}, {logits},
                        [target, probs = std::move(probs)](TensorNode& self) {
    if (!wants_grad(self, 0)) {
      return;
    }
    auto& dz = self.parents[0]->grad;
    const double g = self.grad[0];
    for (std::size_t i = 0; i < dz.size(); ++i) {
      dz[i] += g * (probs[i] - (i == target ? 1.0 : 0.0));
    }
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) {
    total += v;
  }
  return make_op_output({1}, {total}, {x}, [](TensorNode& self) {
    if (!wants_grad(self, 0)) {
      return;
    }
    auto& dx = self.parents[0]->grad;
    const double g = self.grad[0];
    for (double& d : dx) {
      d += g;
    }
  });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  check_2d(a, "concat_rows");
  check_2d(b, "concat_rows");
  const std::size_t c = a.shape()[1];
  if (b.shape()[1] != c) {
    throw ShapeError("concat_rows width mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0];
  const std::size_t n = b.shape()[0];
  std::vector<double> out;
  out.reserve((m + n) * c);
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  return make_op_output({m + n, c}, std::move(out), {a, b}, [m, c](TensorNode& self) {
    if (wants_grad(self, 0)) {
      auto& da = self.parents[0]->grad;
      for (std::size_t i = 0; i < da.size(); ++i) {
        da[i] += self.grad[i];
      }
    }
    if (wants_grad(self, 1)) {
      auto& db = self.parents[1]->grad;
      const std::size_t off = m * c;
      for (std::size_t i = 0; i < db.size(); ++i) {
        db[i] += self.grad[off + i];
      }
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols requires at least one part");
  const std::size_t r = parts[0].shape()[0];
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    check_2d(p, "concat_cols");
    if (p.shape()[0] != r) {
      throw ShapeError("concat_cols row mismatch: " + shape_str(parts[0].shape()) +
                       " vs " + shape_str(p.shape()));
    }
    total += p.shape()[1];
  }
  std::vector<double> out(r * total);
  std::vector<std::size_t> offsets(parts.size());
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    offsets[p] = off;
    const std::size_t c = parts[p].shape()[1];
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        out[i * total + off + j] = parts[p].data()[i * c + j];
      }
    }
    off += c;
  }
  return make_op_output({r, total}, std::move(out), parts,
                        [r, total, offsets = std::move(offsets)](TensorNode& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      if (!wants_grad(self, p)) {
        continue;
      }
      auto& dp = self.parents[p]->grad;
      const std::size_t c = self.parents[p]->shape[1];
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          dp[i * c + j] += self.grad[i * total + offsets[p] + j];
        }
      }
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  require(x.ndim() >= 1 && x.ndim() <= 2, "slice_rows requires a 1-d or 2-d tensor");
  const std::size_t r = x.shape()[0];
  const std::size_t c = x.ndim() == 1 ? 1 : x.shape()[1];
  if (start + count > r) {
    throw ShapeError("slice_rows range [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") exceeds " + std::to_string(r) +
                     " rows");
  }
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(start * c),
                          x.data().begin() + static_cast<std::ptrdiff_t>((start + count) * c));
  std::vector<std::size_t> shape =
      x.ndim() == 1 ? std::vector<std::size_t>{count} : std::vector<std::size_t>{count, c};
  return make_op_output(std::move(shape), std::move(out), {x},
                        [start, c](TensorNode& self) {
    if (!wants_grad(self, 0)) {
      return;
    }
    auto& dx = self.parents[0]->grad;
    const std::size_t off = start * c;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      dx[off + i] += self.grad[i];
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  check_2d(x, "slice_cols");
  const std::size_t r = x.shape()[0];
  const std::size_t c = x.shape()[1];
  if (start + count > c) {
    throw ShapeError("slice_cols range [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") exceeds " + std::to_string(c) +
                     " columns");
  }
  std::vector<double> out(r * count);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < count; ++j) {
      out[i * count + j] = x.data()[i * c + start + j];
    }
  }
  return make_op_output({r, count}, std::move(out), {x},
                        [r, c, start, count](TensorNode& self) {
    if (!wants_grad(self, 0)) {
      return;
    }
    auto& dx = self.parents[0]->grad;
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < count; ++j) {
        dx[i * c + start + j] += self.grad[i * count + j];
      }
    }
  });
}

Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& ids) {
  check_2d(table, "gather_rows");
  const std::size_t v = table.shape()[0];
  const std::size_t c = table.shape()[1];
  for (std::size_t id : ids) {
    if (id >= v) {
      throw IndexError("gather_rows id " + std::to_string(id) + " out of range for " +
                       std::to_string(v) + " rows");
    }
  }
  std::vector<double> out(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double* row = table.data().data() + ids[i] * c;
    std::copy(row, row + c, out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  return make_op_output({ids.size(), c}, std::move(out), {table},
                        [ids, c](TensorNode& self) {
    if (!wants_grad(self, 0)) {
      return;
    }
    auto& dt = self.parents[0]->grad;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        dt[ids[i] * c + j] += self.grad[i * c + j];
      }
    }
  });
}

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape) {
  if (shape_product(shape) != x.size()) {
    throw ShapeError("reshape to " + shape_str(shape) + " incompatible with " +
                     shape_str(x.shape()));
  }
  std::vector<double> out = x.data();
  return make_op_output(std::move(shape), std::move(out), {x}, [](TensorNode& self) {
    if (!wants_grad(self, 0)) {
      return;
    }
    auto& dx = self.parents[0]->grad;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      dx[i] += self.grad[i];
    }
  });
}

// ---- gradient checking ----

double grad_check(const std::function<Tensor()>& loss_fn,
                  const std::vector<std::pair<std::string, Tensor>>& params,
                  double step, std::size_t coords_per_tensor, std::uint64_t seed) {
  if (step <= 0.0) {
    throw ContractError("grad_check step must be positive");
  }
  for (const auto& [name, t] : params) {
    if (!t.requires_grad()) {
      throw ContractError("grad_check parameter '" + name + "' does not require grad");
    }
  }

  std::vector<std::pair<std::string, Tensor>> probed = params;
  for (auto& [name, t] : probed) {
    t.zero_grad();
  }
  Tensor loss = loss_fn();
  if (!std::isfinite(loss.value())) {
    throw NumericError("grad_check loss is not finite");
  }
  backward(loss);

  Rng rng(seed);
  double max_rel = 0.0;
  for (auto& [name, t] : probed) {
    std::vector<std::size_t> coords;
    const std::size_t n = t.size();
    if (coords_per_tensor == 0 || coords_per_tensor >= n) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        coords[i] = i;
      }
    } else {
      std::set<std::size_t> chosen;
      while (chosen.size() < coords_per_tensor) {
        chosen.insert(rng.index(n));
      }
      coords.assign(chosen.begin(), chosen.end());
    }
    for (std::size_t i : coords) {
      const double analytic = t.grad()[i];
      const double saved = t.data()[i];
      double up, down;
      {
        NoGradGuard guard;
        t.data()[i] = saved + step;
        up = loss_fn().value();
        t.data()[i] = saved - step;
        down = loss_fn().value();
        t.data()[i] = saved;
      }
      if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(analytic)) {
        throw NumericError("grad_check hit a non-finite value at '" + name + "'[" +
                           std::to_string(i) + "]");
      }
      const double fd = (up - down) / (2.0 * step);
      const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-8});
      max_rel = std::max(max_rel, std::abs(analytic - fd) / denom);
    }
  }
  return max_rel;
}

}  // namespace cpqa
