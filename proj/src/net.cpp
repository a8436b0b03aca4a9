#include "last/net.hpp"

#include <algorithm>
#include <cmath>

#include "last/rng.hpp"

namespace last {

void NetworkSpec::validate() const {
  if (input_dim == 0) throw ValueError("network spec: input_dim must be positive");
  if (num_classes < 2) throw ValueError("network spec: num_classes must be >= 2");
  for (std::size_t w : hidden)
    if (w == 0) throw ValueError("network spec: hidden widths must be positive");
}

std::size_t NetworkSpec::param_count() const {
  std::size_t n = 0, din = input_dim;
  for (std::size_t w : hidden) {
    n += din * w + w;
    din = w;
  }
  n += din * num_classes + num_classes;
  return n;
}

void ParamVector::check_layout() const {
  if (values.rank() != 1) throw ShapeError("param vector: values must be rank 1");
  std::size_t expect = 0;
  for (const auto& e : layout) {
    if (e.offset != expect) {
      throw ShapeError("param vector: layout entry " + e.id + " not contiguous");
    }
    expect += shape_numel(e.shape);
  }
  if (expect != values.numel()) {
    throw ShapeError("param vector: layout covers " + std::to_string(expect) + " of " +
                     std::to_string(values.numel()) + " values");
  }
}

std::vector<LayoutEntry> param_layout(const NetworkSpec& spec) {
  std::vector<LayoutEntry> layout;
  std::size_t offset = 0, din = spec.input_dim, layer = 0;
  auto push = [&](const std::string& id, std::vector<std::size_t> shape) {
    std::size_t n = shape_numel(shape);
    layout.push_back({id, offset, std::move(shape)});
    offset += n;
  };
  std::vector<std::size_t> widths = spec.hidden;
  widths.push_back(spec.num_classes);
  for (std::size_t w : widths) {
    push("w" + std::to_string(layer), {din, w});
    push("b" + std::to_string(layer), {w});
    din = w;
    ++layer;
  }
  return layout;
}

ParamVector zeros_like(const ParamVector& p) {
  ParamVector z;
  z.values = Tensor::zeros({p.values.numel()});
  z.layout = p.layout;
  return z;
}

ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector p;
  p.layout = param_layout(spec);
  p.values = Tensor::zeros({spec.param_count()});
  Rng rng(seed);
  for (const auto& e : p.layout) {
    if (e.id[0] == 'w') {
      std::size_t fan_in = e.shape[0];
      real std_dev = std::sqrt(real(2) / real(fan_in));
      std::size_t n = shape_numel(e.shape);
      for (std::size_t i = 0; i < n; ++i) p.values.data[e.offset + i] = std_dev * rng.normal();
    }
    // biases stay zero
  }
  p.check_layout();
  return p;
}

std::vector<NodeId> add_param_leaves(Graph& g, const NetworkSpec& spec, bool differentiable) {
  spec.validate();
  std::vector<NodeId> leaves;
  for (const auto& e : param_layout(spec)) {
    leaves.push_back(g.leaf(e.shape, differentiable, e.id));
  }
  return leaves;
}

NodeId add_forward(Graph& g, const NetworkSpec& spec, const std::vector<NodeId>& param_leaves,
                   NodeId input) {
  NodeId h = input;
  std::size_t n_layers = spec.hidden.size() + 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    h = g.affine(h, param_leaves[2 * l], param_leaves[2 * l + 1]);
    if (l + 1 < n_layers) h = g.relu(h);
  }
  return h;
}

void bind_params(Graph& g, const std::vector<NodeId>& param_leaves, const ParamVector& params) {
  for (std::size_t i = 0; i < param_leaves.size(); ++i) {
    const LayoutEntry& e = params.layout[i];
    Tensor t = Tensor::zeros(e.shape);
    std::copy(params.values.data.begin() + e.offset,
              params.values.data.begin() + e.offset + t.numel(), t.data.begin());
    g.bind(param_leaves[i], std::move(t));
  }
}

ModelGraph build_model_graph(const NetworkSpec& spec, std::size_t batch,
                             bool params_differentiable, bool input_differentiable) {
  ModelGraph m;
  m.input = m.graph.leaf({batch, spec.input_dim}, input_differentiable, "input");
  m.param_leaves = add_param_leaves(m.graph, spec, params_differentiable);
  m.logits = add_forward(m.graph, spec, m.param_leaves, m.input);
  return m;
}

Tensor predict_logits(const NetworkSpec& spec, const ParamVector& params,
                      const Tensor& batch_inputs) {
  if (batch_inputs.rank() != 2 || batch_inputs.shape[1] != spec.input_dim ||
      batch_inputs.shape[0] == 0) {
    throw ShapeError("predict_logits: inputs " + shape_str(batch_inputs.shape) +
                     " incompatible with input_dim " + std::to_string(spec.input_dim));
  }
  ModelGraph m = build_model_graph(spec, batch_inputs.shape[0], false, false);
  bind_params(m.graph, m.param_leaves, params);
  m.graph.bind(m.input, batch_inputs);
  return m.graph.forward_eval(m.logits);
}

ParamVector flatten_grads(const NetworkSpec& spec, const std::vector<NodeId>& param_leaves,
                          const std::map<NodeId, Tensor>& grads, const ParamVector& like) {
  (void)spec;
  ParamVector out = zeros_like(like);
  for (std::size_t i = 0; i < param_leaves.size(); ++i) {
    const LayoutEntry& e = like.layout[i];
    const Tensor& g = grads.at(param_leaves[i]);
    std::copy(g.data.begin(), g.data.end(), out.values.data.begin() + e.offset);
  }
  return out;
}

void axpy(ParamVector& dst, real a, const ParamVector& x) {
  for (std::size_t i = 0; i < dst.values.numel(); ++i) dst.values.data[i] += a * x.values.data[i];
}

real l2_norm(const ParamVector& p) {
  real s = 0;
  for (real v : p.values.data) s += v * v;
  return std::sqrt(s);
}

real max_rel_diff(const ParamVector& a, const ParamVector& b, real floor) {
  real worst = 0;
  for (std::size_t i = 0; i < a.values.numel(); ++i) {
    real x = a.values.data[i], y = b.values.data[i];
    real denom = std::max({std::abs(x), std::abs(y), floor});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

}  // namespace last
