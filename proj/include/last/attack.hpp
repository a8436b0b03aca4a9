#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>

#include "last/data.hpp"
#include "last/net.hpp"

namespace last {

// Element-wise sign with sgn(0) = 0: zero-gradient coordinates stay put.
inline real sign0(real v) { return v > real(0) ? real(1) : (v < real(0) ? real(-1) : real(0)); }

// The l-inf perturbation set and iteration schedule. PGD-10 is (K=10, R=1),
// PGD-50 is (K=50, R=10); FGSM-style training uses K=1 with uniform init.
struct AttackConfig {
  real epsilon = real(8.0 / 255.0);
  real alpha = real(2.0 / 255.0);
  int steps = 10;
  int restarts = 1;
  enum class Init { kZero, kUniform };
  Init init = Init::kUniform;
  std::optional<std::array<real, 2>> pixel_box = std::array<real, 2>{real(0), real(1)};

  void validate() const;
};

AttackConfig pgd10(real epsilon);
AttackConfig pgd50(real epsilon);

struct Perturbation {
  Tensor delta;                  // per-example selection over restarts
  std::vector<real> attack_loss; // cross-entropy of the selected restart
};

// Observation points for property tests; on_step fires after each projection,
// on_restart with each restart's final iterate and its per-example loss.
struct CraftHooks {
  std::function<void(int restart, int step, const Tensor& delta)> on_step;
  std::function<void(int restart, const Tensor& delta, const std::vector<real>& loss)> on_restart;
};

// K projected sign-gradient ascent steps on the attack cross-entropy against
// the given model, restarted R times; per example the restart with the
// highest final loss wins. The pixel box, when set, is re-imposed on u+delta
// after every step.
Perturbation craft_perturbation(const NetworkSpec& spec, const ParamVector& params,
                                const Batch& batch, const AttackConfig& cfg, std::uint64_t seed,
                                const CraftHooks* hooks = nullptr);

Tensor apply_perturbation(const Tensor& inputs, const Perturbation& pert,
                          const std::optional<std::array<real, 2>>& pixel_box);

}  // namespace last
