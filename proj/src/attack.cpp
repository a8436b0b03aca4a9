#include "last/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "last/rng.hpp"

namespace last {

void AttackConfig::validate() const {
  if (epsilon < real(0)) throw ValueError("attack: epsilon must be >= 0");
  if (alpha <= real(0)) throw ValueError("attack: alpha must be > 0");
  if (steps < 1) throw ValueError("attack: steps must be >= 1");
  if (restarts < 1) throw ValueError("attack: restarts must be >= 1");
  if (pixel_box && !((*pixel_box)[0] <= (*pixel_box)[1])) {
    throw ValueError("attack: pixel_box lo > hi");
  }
}

AttackConfig pgd10(real epsilon) {
  AttackConfig cfg;
  cfg.epsilon = epsilon;
  cfg.alpha = epsilon / real(4);
  cfg.steps = 10;
  cfg.restarts = 1;
  cfg.init = AttackConfig::Init::kUniform;
  return cfg;
}

AttackConfig pgd50(real epsilon) {
  AttackConfig cfg = pgd10(epsilon);
  cfg.steps = 50;
  cfg.restarts = 10;
  return cfg;
}

namespace {

// delta <- max[min(delta, eps), -eps], then keep u+delta inside the box.
void project(Tensor& delta, const Tensor& inputs, const AttackConfig& cfg) {
  for (std::size_t i = 0; i < delta.numel(); ++i) {
    real d = std::min(std::max(delta.data[i], -cfg.epsilon), cfg.epsilon);
    if (cfg.pixel_box) {
      real v = std::min(std::max(inputs.data[i] + d, (*cfg.pixel_box)[0]), (*cfg.pixel_box)[1]);
      d = v - inputs.data[i];
    }
    delta.data[i] = d;
  }
}

Tensor added(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += b.data[i];
  return out;
}

}  // namespace

Perturbation craft_perturbation(const NetworkSpec& spec, const ParamVector& params,
                                const Batch& batch, const AttackConfig& cfg, std::uint64_t seed,
                                const CraftHooks* hooks) {
  cfg.validate();
  if (cfg.pixel_box) {
    for (real v : batch.inputs.data) {
      if (v < (*cfg.pixel_box)[0] || v > (*cfg.pixel_box)[1]) {
        throw ValueError("craft_perturbation: inputs violate the pixel box");
      }
    }
  }

  const std::size_t b = batch.inputs.shape[0];
  const std::size_t d = batch.inputs.shape[1];

  ModelGraph m = build_model_graph(spec, b, /*params_differentiable=*/false,
                                   /*input_differentiable=*/true);
  bind_params(m.graph, m.param_leaves, params);
  NodeId per_row = m.graph.softmax_cross_entropy(m.logits, batch.labels);
  NodeId loss = m.graph.mean(per_row);

  Perturbation best;
  best.delta = Tensor::zeros(batch.inputs.shape);
  best.attack_loss.assign(b, -std::numeric_limits<real>::infinity());

  for (int r = 0; r < cfg.restarts; ++r) {
    Rng rng(split_seed(seed, "restart", std::uint64_t(r)));
    Tensor delta = Tensor::zeros(batch.inputs.shape);
    if (cfg.init == AttackConfig::Init::kUniform) {
      for (real& v : delta.data) v = rng.uniform(-cfg.epsilon, cfg.epsilon);
    }
    project(delta, batch.inputs, cfg);

    for (int k = 0; k < cfg.steps; ++k) {
      m.graph.bind(m.input, added(batch.inputs, delta));
      m.graph.forward_eval(loss);
      Tensor grad = m.graph.backward_grad(loss).at(m.input);
      for (std::size_t i = 0; i < delta.numel(); ++i) {
        delta.data[i] += cfg.alpha * sign0(grad.data[i]);
      }
      project(delta, batch.inputs, cfg);
      if (hooks && hooks->on_step) hooks->on_step(r, k, delta);
    }

    m.graph.bind(m.input, added(batch.inputs, delta));
    m.graph.forward_eval(loss);
    const Tensor& final_loss = m.graph.value(per_row);
    if (hooks && hooks->on_restart) {
      hooks->on_restart(r, delta, std::vector<real>(final_loss.data.begin(), final_loss.data.end()));
    }
    for (std::size_t e = 0; e < b; ++e) {
      if (final_loss.data[e] > best.attack_loss[e]) {
        best.attack_loss[e] = final_loss.data[e];
        std::copy(delta.data.begin() + e * d, delta.data.begin() + (e + 1) * d,
                  best.delta.data.begin() + e * d);
      }
    }
  }
  return best;
}

Tensor apply_perturbation(const Tensor& inputs, const Perturbation& pert,
                          const std::optional<std::array<real, 2>>& pixel_box) {
  if (!inputs.same_shape(pert.delta)) {
    throw ShapeError("apply_perturbation: inputs " + shape_str(inputs.shape) + " vs delta " +
                     shape_str(pert.delta.shape));
  }
  Tensor out = added(inputs, pert.delta);
  if (pixel_box) {
    for (real& v : out.data) v = std::min(std::max(v, (*pixel_box)[0]), (*pixel_box)[1]);
  }
  return out;
}

}  // namespace last
