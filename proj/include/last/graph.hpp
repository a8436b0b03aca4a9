#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "last/tensor.hpp"

namespace last {

using NodeId = std::int32_t;

enum class OpKind {
  kLeaf,
  kAffine,   // x(B,din) * w(din,dout) + b(dout) broadcast over the batch axis
  kRelu,
  kAdd,
  kScale,
  kMul,      // elementwise
  kSum,
  kMean,
  kLog,
  kExp,
  kMaxReduce,
  kSoftmaxCrossEntropy,  // per-row loss, shape (B,)
  kKlTemperature,        // per-row KL(softmax(t/tau) || softmax(s/tau)), shape (B,)
  kClamp,
};

// Reverse-mode tape over a small fixed primitive set. Nodes are created in
// topological order; shapes are checked at build time. A Graph is a value:
// copy or move it between threads, never mutate one instance concurrently.
class Graph {
public:
  struct Node {
    OpKind op = OpKind::kLeaf;
    NodeId in0 = -1, in1 = -1, in2 = -1;
    std::vector<std::size_t> shape;
    Tensor value;
    bool has_value = false;
    bool differentiable = false;  // leaves only
    bool needs_grad = false;      // reaches a differentiable leaf
    std::string name;
    real a0 = 0, a1 = 0;          // scale factor / clamp bounds / kl tau
    int axis = -1;
    std::vector<int> labels;
    Tensor saved;                 // op-specific backward cache
  };

  // Leaves are bound before evaluation; differentiable leaves receive
  // gradients from backward_grad, constant leaves do not.
  NodeId leaf(std::vector<std::size_t> shape, bool differentiable, std::string name = {});

  NodeId affine(NodeId x, NodeId w, NodeId b);
  NodeId relu(NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId x, real c);
  NodeId mul(NodeId a, NodeId b);
  NodeId sum(NodeId x);
  NodeId mean(NodeId x);
  NodeId log(NodeId x);
  NodeId exp(NodeId x);
  NodeId max_reduce(NodeId x, int axis);
  NodeId softmax_cross_entropy(NodeId logits, std::vector<int> labels);
  NodeId kl_temperature(NodeId student, NodeId teacher, real tau);
  NodeId clamp(NodeId x, real lo, real hi);

  void bind(NodeId leaf, Tensor value);

  // Evaluates every node up to and including `output`; caches intermediates
  // for backward. Throws ShapeError on unbound leaves, NumericError (with the
  // node id) when an intermediate turns non-finite.
  const Tensor& forward_eval(NodeId output);

  // Gradient of the scalar at `loss` with respect to every differentiable
  // leaf; leaves the loss cannot reach get zeros. Accumulation order is fixed
  // by node index, so repeated runs are bit-identical.
  std::map<NodeId, Tensor> backward_grad(NodeId loss);

  // Central-difference check of backward_grad at `leaf`, elementwise step
  // h*(1+|x|). Returns the max relative error with denominator
  // max(|analytic|, |numeric|, 1e-8). Requires the 64-bit build.
  real finite_diff_check(NodeId loss, NodeId leaf, real h);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const Node& node(NodeId id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

private:
  NodeId push(Node n);
  void check_id(NodeId id, const char* what) const;
  void compute(NodeId id);

  std::vector<Node> nodes_;
  NodeId last_forward_ = -1;
};

}  // namespace last
