#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "robustaug/tensor.hpp"

namespace robustaug {

enum class OpKind {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  Clamp,
  Sign,
  Exp,
  Log,
  Silu,
  Sum,
  Mean,
  SumRows,
  Reshape,
  Affine,
  Conv2d,
  LogSoftmax,
  SoftmaxCrossEntropy,
  KlDivergence,
  MarginLoss,
  Pick,
};

std::string_view op_name(OpKind kind);

// Handle to a node of a Graph. Only meaningful together with its graph.
struct Var {
  std::size_t id = 0;
};

// Define-by-run reverse-mode tape. Nodes are appended in creation order,
// which is a topological order; backward walks it in reverse exactly once.
//
// Leaves come in three flavours:
//  - leaf(Tensor&): references an external tensor; if it requires grad,
//    backward accumulates into tensor.grad.
//  - input(Tensor, requires_grad): owned by the graph; its gradient is read
//    back with grad(Var).
//  - constant / constant_ref: never differentiated.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  Var leaf(Tensor& tensor);
  Var input(Tensor tensor, bool requires_grad = true);
  Var constant(Tensor tensor);
  Var constant_ref(const Tensor& tensor);

  // Elementwise. Binary ops take equal shapes, or a scalar `b`.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var add_scalar(Var a, double offset);
  Var clamp(Var a, double lo, double hi);
  Var sign(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var silu(Var a);

  Var sum(Var a);
  Var mean(Var a);
  // [B, ...] -> [B], summing everything but the leading axis.
  Var sum_rows(Var a);
  Var reshape(Var a, Shape shape);

  // y = x w + b with x [B,I], w [I,O], b [O].
  Var affine(Var x, Var w, Var b);
  // x [B,C,H,W], kernel [F,C,kh,kw], optional bias [F].
  Var conv2d(Var x, Var kernel, std::optional<Var> bias, std::size_t stride, std::size_t padding);

  Var log_softmax(Var logits);
  // Per-example -sum_k y_k log softmax(z)_k, shape [B]. Rows of `soft_labels`
  // must be distributions.
  Var softmax_cross_entropy_rows(Var logits, const Tensor& soft_labels);
  // Batch mean of softmax_cross_entropy_rows.
  Var softmax_cross_entropy(Var logits, const Tensor& soft_labels);
  // Per-example KL(softmax(p) || softmax(q)), shape [B].
  Var kl_divergence_rows(Var logits_p, Var logits_q);
  Var kl_divergence(Var logits_p, Var logits_q);
  // Per-example z_y - max_{i != y} z_i, shape [B].
  Var margin_loss(Var logits, std::span<const int> labels);
  // Per-example z[b, index[b]], shape [B].
  Var pick(Var logits, std::span<const int> index);

  const Tensor& value(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape; }
  bool requires_grad(Var v) const;
  OpKind kind(Var v) const;
  std::span<const std::size_t> parents(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Populates gradients of every differentiable leaf with d root / d leaf.
  // Gradients of external leaves accumulate across calls.
  void backward(Var root);
  // Gradient of a graph-owned input after backward().
  std::span<const double> grad(Var v) const;

 private:
  struct Node {
    OpKind kind = OpKind::Constant;
    std::vector<std::size_t> parents;
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor* external_mut = nullptr;
    bool needs_grad = false;
    std::function<void(Graph&, std::size_t)> backward;
    std::vector<double> adjoint;
  };

  Var push(Node node);
  Node make(OpKind kind, std::vector<std::size_t> parents, Tensor value);
  std::vector<double>& adj(std::size_t id);
  const Node& node(Var v) const;
  Var binary(OpKind kind, Var a, Var b);
  Var unary(OpKind kind, Var a, double p0 = 0.0, double p1 = 0.0);

  std::vector<Node> nodes_;
};

}  // namespace robustaug
