#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "last/attack.hpp"
#include "last/checkpoint.hpp"
#include "last/data.hpp"
#include "last/evaluator.hpp"
#include "last/objective.hpp"

namespace last {

enum class TrainMode { kSat, kLast, kSatSwa };

std::string mode_name(TrainMode mode);
TrainMode parse_mode(const std::string& name);

struct OptimizerConfig {
  real momentum = 0.9;
  real weight_decay = 5e-4;
};

struct SchedulerConfig {
  enum class Kind { kConstant, kCyclic, kMultistep };
  Kind kind = Kind::kConstant;
  real max_lr = 0;  // cyclic peak; 0 means "use the base lr"
  std::vector<int> milestones = {100, 150};
  real factor = 0.1;
};

struct TrainConfig {
  TrainMode mode = TrainMode::kSat;
  int epochs = 10;
  real lr = 0.1;
  real gamma = 0.8;  // aggregation coefficient, (0, 1]
  std::size_t batch_size = 128;
  AttackConfig attack;
  std::optional<SDConfig> sd;
  OptimizerConfig optimizer;
  SchedulerConfig scheduler;
  AttackConfig eval_attack = pgd10(real(8.0 / 255.0));
  int swa_start_epoch = 0;
  bool proxy_bare_step = false;  // plain beta-step for the proxy (theory runs)
  std::uint64_t seed = 1;
  std::size_t eval_batch_size = 256;
  int eval_threads = 1;

  void validate() const;
};

struct TrainerState {
  ParamVector theta;
  ParamVector omega;  // proxy parameters (LAST mode)
  ParamVector momentum_buffer;
  ParamVector swa_average;
  long swa_count = 0;
  long iteration = 0;
  int epoch = 0;
};

struct MetricsRecord {
  int epoch = 0;
  real train_loss = 0;
  real sa = 0;
  real ra = 0;
  real robust_loss = 0;
  real lr = 0;
  double seconds = 0;
};

// Step-level view for invariant checks; references are valid only inside the
// observer call. step_norm is the norm of the applied increment,
// scaled_proxy_norm is gamma*||omega_tilde - theta_before||.
struct StepTrace {
  long iteration = 0;
  const ParamVector& theta_before;
  const ParamVector& omega_tilde;
  const ParamVector& theta_after;
  const ParamVector& omega_after;
  real step_norm = 0;
  real scaled_proxy_norm = 0;
  real loss = 0;
};

using StepObserver = std::function<void(const StepTrace&)>;

struct TrainResult {
  Checkpoint final_checkpoint;
  Checkpoint best_checkpoint;
  std::vector<MetricsRecord> metrics;
  int best_epoch = -1;
  bool aborted = false;
  std::string abort_reason;
  bool collapse_flagged = false;
  int collapse_epoch = -1;
};

// g' = g + wd*p; buf = m*buf + g'; p -= lr*buf.
void sgd_step(ParamVector& params, const ParamVector& grads, real lr, ParamVector& momentum_buffer,
              real momentum, real weight_decay);

// cyclic: triangular ramp 0 -> max_lr at J/2 -> 0 at J; multistep: base lr
// times factor per milestone passed; constant: base lr.
real schedule_lr(const SchedulerConfig& sched, real base_lr, int epoch, int total_epochs);

class Trainer {
public:
  Trainer(NetworkSpec spec, TrainConfig cfg);

  // One optimization step at the current lr; returns the defense loss value.
  real step(const Batch& batch);
  real sat_step(const Batch& batch);
  real last_step(const Batch& batch);
  void swa_update();

  void set_lr(real lr) { lr_ = lr; }
  real lr() const { return lr_; }
  void set_step_observer(StepObserver obs) { observer_ = std::move(obs); }

  TrainerState& state() { return state_; }
  const TrainerState& state() const { return state_; }
  const NetworkSpec& spec() const { return spec_; }
  const TrainConfig& config() const { return cfg_; }

  // The parameters evaluation and checkpoints use (the SWA average once it
  // exists in SAT+SWA mode, theta otherwise).
  const ParamVector& eval_params() const;

  TrainResult train(const Dataset& train_set, const Dataset& test_set);

private:
  real defense_loss_grads(const ParamVector& at, const Batch& batch, const Tensor& adv_inputs,
                          ParamVector& grads_out);
  Checkpoint make_checkpoint(const ParamVector& params, int epoch) const;

  NetworkSpec spec_;
  TrainConfig cfg_;
  TrainerState state_;
  real lr_;
  StepObserver observer_;
};

// ---- convergence-theory harness ----

// A smooth deterministic objective under a fixed (possibly zero)
// perturbation, exposed through its gradient.
struct SmoothProblem {
  std::function<Tensor(const Tensor&)> grad;
  Tensor theta0;
};

// L(w) = 0.5*||w - (target + shift)||^2.
SmoothProblem quadratic_problem(Tensor target, Tensor theta0, Tensor shift = {});

struct CauchyTrace {
  std::vector<real> step_norms;          // ||theta_{i+1} - theta_i||
  std::vector<real> scaled_proxy_norms;  // gamma*||omega_tilde - theta_i||
  std::vector<Tensor> thetas;            // theta_0 .. theta_steps
  real max_identity_rel_err = 0;
  real trailing_max_pairwise = 0;  // over the trailing window
  bool diverged = false;           // norms grew for 50 consecutive steps
};

// Runs the proxy-guided update rule (bare beta gradient step for the proxy)
// on the problem and checks the per-step norm identity.
CauchyTrace cauchy_harness(real gamma, real beta, int steps, const SmoothProblem& problem,
                           std::size_t window = 50);

}  // namespace last
