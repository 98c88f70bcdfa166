#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "patchdef/tensor.hpp"

namespace patchdef::nn {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the dynamic computation graph.
struct Node {
  Tensor value;
  Tensor grad;  // lazily allocated, same shape as value
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward_fn;  // accumulates into inputs' grads
  const char* op = "leaf";

  Tensor& ensure_grad() {
    if (!grad.defined()) grad = Tensor(value.shape());
    return grad;
  }
};

/// Shared handle to a graph node. Copy = alias, as in define-by-run frameworks.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor v, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(v);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad() { return node_->ensure_grad(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  void zero_grad() {
    if (node_->grad.defined()) node_->grad.fill(0.0f);
  }

  const std::vector<int>& shape() const { return node_->value.shape(); }
  NodePtr node() const { return node_; }

 private:
  NodePtr node_;
};

// ---- graph construction ---------------------------------------------------

Var constant(Tensor t);

// Elementwise with numpy-style broadcasting (dims equal or 1).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var add_scalar(const Var& a, float s);
Var mul_scalar(const Var& a, float s);

Var relu(const Var& x);
Var elu(const Var& x);  // alpha = 1
Var leaky_relu(const Var& x, float slope);
Var sigmoid(const Var& x);
Var tanh_act(const Var& x);
Var softplus(const Var& x);  // log(1 + e^x), overflow-safe
Var log_op(const Var& x);
Var sqrt_op(const Var& x);
Var abs_op(const Var& x);
Var clamp_min(const Var& x, float lo);

/// 2-d convolution, NCHW. w: (Cout, Cin, kh, kw); b: (Cout) or undefined Var.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);

/// x: (N, K) fully-connected. w: (M, K), b: (M) or undefined.
Var linear(const Var& x, const Var& w, const Var& b);

Var upsample_nearest2(const Var& x);
Var maxpool2(const Var& x);
Var global_avg_pool(const Var& x);  // (N,C,H,W) -> (N,C,1,1)
Var global_max_pool(const Var& x);
Var channel_mean(const Var& x);  // (N,C,H,W) -> (N,1,H,W)
Var channel_max(const Var& x);
Var concat_channels(const std::vector<Var>& xs);
Var flatten2(const Var& x);  // (N,C,H,W) -> (N, C*H*W)
Var reshape(const Var& x, std::vector<int> new_shape);

Var sum_all(const Var& x);      // -> (1)
Var mean_all(const Var& x);     // -> (1)
Var sum_spatial(const Var& x);  // (N,C,H,W) -> (N,C,1,1)

Var log_softmax_rows(const Var& x);  // (N,K) rows
/// mean over n of logp[n, labels[n]]  -> (1)
Var gather_rows_mean(const Var& logp, const std::vector<int>& labels);

/// Cuts the graph: value shared, no gradient flows back.
Var detach(const Var& x);

/// Reverse-mode sweep from a scalar root (seeds d(root)/d(root) = 1).
void backward(const Var& root);

}  // namespace patchdef::nn
