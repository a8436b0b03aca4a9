#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "last/data.hpp"
#include "last/graph.hpp"

namespace last {

// Self-distillation knobs. detach_clean treats the clean-branch soft targets
// as constants; tau_squared_scale multiplies the KL term by tau^2.
struct SDConfig {
  real mu = 0.95;
  real tau = 6.0;
  bool detach_clean = true;
  bool tau_squared_scale = false;

  void validate() const;
};

// Graph builders -- every loss the trainer differentiates goes through these.
NodeId append_cross_entropy(Graph& g, NodeId logits, const std::vector<int>& labels);
NodeId append_kl_temperature(Graph& g, NodeId student, NodeId teacher, real tau,
                             bool tau_squared_scale = false);
// mu*KL(adv||clean at temperature tau) + (1-mu)*CE(adv, labels). With mu = 0
// this is exactly the cross-entropy node: same code path, same bits.
NodeId append_sd_loss(Graph& g, NodeId clean_logits, NodeId adv_logits,
                      const std::vector<int>& labels, const SDConfig& sd);

// Value-level forms, evaluated through the same graph primitives.
real cross_entropy(const Tensor& logits, const std::vector<int>& labels);
real kl_temperature(const Tensor& student_logits, const Tensor& teacher_logits, real tau,
                    bool tau_squared_scale = false);
real sd_loss(const Tensor& clean_logits, const Tensor& adv_logits, const std::vector<int>& labels,
             const SDConfig& sd);

// lambda*a + (1-lambda)*b with labels from the dominant component a. When
// lambda is not supplied it is drawn per example from U[0.5, 1].
Batch mixup_batch(const Batch& a, const Batch& b, std::optional<real> lambda, std::uint64_t seed);

}  // namespace last
