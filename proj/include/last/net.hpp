#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "last/graph.hpp"
#include "last/tensor.hpp"

namespace last {

// Feedforward relu classifier: input -> hidden widths -> num_classes logits.
// hidden may be empty (a plain linear classifier).
struct NetworkSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t num_classes = 0;

  void validate() const;
  std::size_t param_count() const;
  bool operator==(const NetworkSpec&) const = default;
};

struct LayoutEntry {
  std::string id;  // "w0", "b0", ...
  std::size_t offset = 0;
  std::vector<std::size_t> shape;
};

// Flat parameter vector plus the layer layout that tiles it exactly once.
struct ParamVector {
  Tensor values;  // rank 1
  std::vector<LayoutEntry> layout;

  std::size_t size() const { return values.numel(); }
  void check_layout() const;  // contiguous, non-overlapping, full cover
};

ParamVector zeros_like(const ParamVector& p);

std::vector<LayoutEntry> param_layout(const NetworkSpec& spec);

// Fan-in scaled normal weights (std = sqrt(2/fan_in)), zero biases,
// fully determined by the seed.
ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed);

// In-graph forward pass. Parameter leaves are created in layout order;
// towers sharing leaves share parameters.
std::vector<NodeId> add_param_leaves(Graph& g, const NetworkSpec& spec, bool differentiable);
NodeId add_forward(Graph& g, const NetworkSpec& spec, const std::vector<NodeId>& param_leaves,
                   NodeId input);
void bind_params(Graph& g, const std::vector<NodeId>& param_leaves, const ParamVector& params);

// Convenience bundle for single-tower uses (attack, prediction).
struct ModelGraph {
  Graph graph;
  NodeId input = -1;
  std::vector<NodeId> param_leaves;
  NodeId logits = -1;
};

ModelGraph build_model_graph(const NetworkSpec& spec, std::size_t batch, bool params_differentiable,
                             bool input_differentiable);

Tensor predict_logits(const NetworkSpec& spec, const ParamVector& params,
                      const Tensor& batch_inputs);

// Flatten a gradient map (leaf id -> tensor) into layout order.
ParamVector flatten_grads(const NetworkSpec& spec, const std::vector<NodeId>& param_leaves,
                          const std::map<NodeId, Tensor>& grads, const ParamVector& like);

// Vector helpers shared by the optimizer, SWA and the theory harness.
void axpy(ParamVector& dst, real a, const ParamVector& x);  // dst += a*x
real l2_norm(const ParamVector& p);
real max_rel_diff(const ParamVector& a, const ParamVector& b, real floor = real(1e-8));

}  // namespace last
