#include "last/objective.hpp"

#include "last/rng.hpp"

namespace last {

void SDConfig::validate() const {
  if (!(mu >= real(0) && mu < real(1))) throw ValueError("sd: mu must be in [0,1)");
  if (!(tau > real(0))) throw ValueError("sd: tau must be > 0");
}

NodeId append_cross_entropy(Graph& g, NodeId logits, const std::vector<int>& labels) {
  return g.mean(g.softmax_cross_entropy(logits, labels));
}

NodeId append_kl_temperature(Graph& g, NodeId student, NodeId teacher, real tau,
                             bool tau_squared_scale) {
  NodeId kl = g.mean(g.kl_temperature(student, teacher, tau));
  if (tau_squared_scale) kl = g.scale(kl, tau * tau);
  return kl;
}

NodeId append_sd_loss(Graph& g, NodeId clean_logits, NodeId adv_logits,
                      const std::vector<int>& labels, const SDConfig& sd) {
  sd.validate();
  if (sd.mu == real(0)) return append_cross_entropy(g, adv_logits, labels);
  NodeId kl = append_kl_temperature(g, adv_logits, clean_logits, sd.tau, sd.tau_squared_scale);
  NodeId ce = append_cross_entropy(g, adv_logits, labels);
  return g.add(g.scale(kl, sd.mu), g.scale(ce, real(1) - sd.mu));
}

real cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  Graph g;
  NodeId l = g.leaf(logits.shape, false, "logits");
  g.bind(l, logits);
  return g.forward_eval(append_cross_entropy(g, l, labels)).data[0];
}

real kl_temperature(const Tensor& student_logits, const Tensor& teacher_logits, real tau,
                    bool tau_squared_scale) {
  Graph g;
  NodeId s = g.leaf(student_logits.shape, false, "student");
  NodeId t = g.leaf(teacher_logits.shape, false, "teacher");
  g.bind(s, student_logits);
  g.bind(t, teacher_logits);
  return g.forward_eval(append_kl_temperature(g, s, t, tau, tau_squared_scale)).data[0];
}

real sd_loss(const Tensor& clean_logits, const Tensor& adv_logits, const std::vector<int>& labels,
             const SDConfig& sd) {
  Graph g;
  NodeId clean = g.leaf(clean_logits.shape, false, "clean");
  NodeId adv = g.leaf(adv_logits.shape, false, "adv");
  g.bind(clean, clean_logits);
  g.bind(adv, adv_logits);
  return g.forward_eval(append_sd_loss(g, clean, adv, labels, sd)).data[0];
}

Batch mixup_batch(const Batch& a, const Batch& b, std::optional<real> lambda, std::uint64_t seed) {
  if (!a.inputs.same_shape(b.inputs)) {
    throw ShapeError("mixup: " + shape_str(a.inputs.shape) + " vs " + shape_str(b.inputs.shape));
  }
  if (lambda && !(*lambda >= real(0.5) && *lambda <= real(1))) {
    throw ValueError("mixup: lambda must be in [0.5, 1]");
  }
  std::size_t n = a.inputs.shape[0], d = a.inputs.shape[1];
  Rng rng(split_seed(seed, "mixup"));
  Batch out;
  out.inputs = Tensor::zeros(a.inputs.shape);
  out.labels = a.labels;
  for (std::size_t e = 0; e < n; ++e) {
    real lam = lambda ? *lambda : rng.uniform(real(0.5), real(1));
    for (std::size_t j = 0; j < d; ++j) {
      std::size_t i = e * d + j;
      out.inputs.data[i] = lam * a.inputs.data[i] + (real(1) - lam) * b.inputs.data[i];
    }
  }
  return out;
}

}  // namespace last
