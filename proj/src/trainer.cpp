#include "last/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "last/rng.hpp"
#include "last/text.hpp"

namespace last {

std::string mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::kSat: return "SAT";
    case TrainMode::kLast: return "LAST";
    case TrainMode::kSatSwa: return "SAT+SWA";
  }
  return "?";
}

TrainMode parse_mode(const std::string& name) {
  if (name == "SAT") return TrainMode::kSat;
  if (name == "LAST") return TrainMode::kLast;
  if (name == "SAT+SWA") return TrainMode::kSatSwa;
  throw ValueError("unknown train mode '" + name + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValueError("train: epochs must be >= 1");
  if (!(lr > real(0))) throw ValueError("train: lr must be > 0");
  if (!(gamma > real(0) && gamma <= real(1))) throw ValueError("train: gamma must be in (0,1]");
  if (batch_size == 0) throw ValueError("train: batch_size must be >= 1");
  attack.validate();
  eval_attack.validate();
  if (sd) sd->validate();
}

void sgd_step(ParamVector& params, const ParamVector& grads, real lr,
              ParamVector& momentum_buffer, real momentum, real weight_decay) {
  if (params.size() != grads.size() || params.size() != momentum_buffer.size()) {
    throw ShapeError("sgd_step: layout mismatch (" + std::to_string(params.size()) + ", " +
                     std::to_string(grads.size()) + ", " +
                     std::to_string(momentum_buffer.size()) + ")");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    real g = grads.values.data[i] + weight_decay * params.values.data[i];
    momentum_buffer.values.data[i] = momentum * momentum_buffer.values.data[i] + g;
    params.values.data[i] -= lr * momentum_buffer.values.data[i];
  }
}

real schedule_lr(const SchedulerConfig& sched, real base_lr, int epoch, int total_epochs) {
  if (epoch < 0 || epoch >= total_epochs) {
    throw ValueError("schedule_lr: epoch " + std::to_string(epoch) + " outside [0," +
                     std::to_string(total_epochs) + ")");
  }
  switch (sched.kind) {
    case SchedulerConfig::Kind::kConstant:
      return base_lr;
    case SchedulerConfig::Kind::kCyclic: {
      real peak = sched.max_lr > real(0) ? sched.max_lr : base_lr;
      real half = real(total_epochs) / real(2);
      if (real(epoch) <= half) return peak * real(epoch) / half;
      return peak * (real(total_epochs) - real(epoch)) / (real(total_epochs) - half);
    }
    case SchedulerConfig::Kind::kMultistep: {
      real lr = base_lr;
      for (int m : sched.milestones)
        if (epoch >= m) lr *= sched.factor;
      return lr;
    }
  }
  return base_lr;
}

Trainer::Trainer(NetworkSpec spec, TrainConfig cfg)
    : spec_(std::move(spec)), cfg_(std::move(cfg)), lr_(cfg_.lr) {
  spec_.validate();
  cfg_.validate();
  state_.theta = init_params(spec_, split_seed(cfg_.seed, "init"));
  state_.omega = state_.theta;  // omega_0 = theta_0
  state_.momentum_buffer = zeros_like(state_.theta);
}

real Trainer::defense_loss_grads(const ParamVector& at, const Batch& batch,
                                 const Tensor& adv_inputs, ParamVector& grads_out) {
  const std::size_t b = batch.size();
  Graph g;
  NodeId adv_in = g.leaf(adv_inputs.shape, false, "adv_input");
  std::vector<NodeId> leaves = add_param_leaves(g, spec_, true);
  NodeId adv_logits = add_forward(g, spec_, leaves, adv_in);

  NodeId loss;
  bool with_sd = cfg_.sd.has_value() && cfg_.sd->mu > real(0);
  if (!with_sd) {
    loss = append_cross_entropy(g, adv_logits, batch.labels);
  } else if (cfg_.sd->detach_clean) {
    NodeId clean = g.leaf({b, spec_.num_classes}, false, "clean_logits");
    g.bind(clean, predict_logits(spec_, at, batch.inputs));
    loss = append_sd_loss(g, clean, adv_logits, batch.labels, *cfg_.sd);
  } else {
    NodeId clean_in = g.leaf(adv_inputs.shape, false, "clean_input");
    g.bind(clean_in, batch.inputs);
    NodeId clean_logits = add_forward(g, spec_, leaves, clean_in);
    loss = append_sd_loss(g, clean_logits, adv_logits, batch.labels, *cfg_.sd);
  }

  bind_params(g, leaves, at);
  g.bind(adv_in, adv_inputs);
  real value = g.forward_eval(loss).data[0];
  auto grads = g.backward_grad(loss);
  grads_out = flatten_grads(spec_, leaves, grads, at);
  return value;
}

real Trainer::step(const Batch& batch) {
  return cfg_.mode == TrainMode::kLast ? last_step(batch) : sat_step(batch);
}

real Trainer::sat_step(const Batch& batch) {
  Perturbation delta =
      craft_perturbation(spec_, state_.theta, batch, cfg_.attack,
                         split_seed(cfg_.seed, "attack", std::uint64_t(state_.iteration)));
  Tensor adv = apply_perturbation(batch.inputs, delta, cfg_.attack.pixel_box);
  ParamVector grads;
  real loss = defense_loss_grads(state_.theta, batch, adv, grads);
  sgd_step(state_.theta, grads, lr_, state_.momentum_buffer, cfg_.optimizer.momentum,
           cfg_.optimizer.weight_decay);
  ++state_.iteration;
  return loss;
}

real Trainer::last_step(const Batch& batch) {
  // the attack targets the current state of the target model
  Perturbation delta =
      craft_perturbation(spec_, state_.theta, batch, cfg_.attack,
                         split_seed(cfg_.seed, "attack", std::uint64_t(state_.iteration)));
  Tensor adv = apply_perturbation(batch.inputs, delta, cfg_.attack.pixel_box);

  // phase 1: fast weights from the proxy response
  ParamVector grads;
  real loss = defense_loss_grads(state_.omega, batch, adv, grads);
  ParamVector omega_tilde = state_.omega;
  if (cfg_.proxy_bare_step) {
    axpy(omega_tilde, -lr_, grads);
  } else {
    sgd_step(omega_tilde, grads, lr_, state_.momentum_buffer, cfg_.optimizer.momentum,
             cfg_.optimizer.weight_decay);
  }

  // phase 2: record theta_i into omega, then descend along the differential
  // unit theta_i - omega_tilde scaled by gamma
  ParamVector theta_before = state_.theta;
  state_.omega = state_.theta;
  real inc_sq = 0, diff_sq = 0;
  for (std::size_t i = 0; i < state_.theta.size(); ++i) {
    real d = theta_before.values.data[i] - omega_tilde.values.data[i];
    real inc = cfg_.gamma * d;
    state_.theta.values.data[i] = theta_before.values.data[i] - inc;
    inc_sq += inc * inc;
    diff_sq += d * d;
  }
  ++state_.iteration;

  if (observer_) {
    StepTrace trace{state_.iteration - 1,           theta_before, omega_tilde,
                    state_.theta,                   state_.omega, std::sqrt(inc_sq),
                    cfg_.gamma * std::sqrt(diff_sq), loss};
    observer_(trace);
  }
  return loss;
}

void Trainer::swa_update() {
  if (state_.swa_count == 0) {
    state_.swa_average = state_.theta;
  } else {
    real n = real(state_.swa_count);
    for (std::size_t i = 0; i < state_.theta.size(); ++i) {
      state_.swa_average.values.data[i] =
          (state_.swa_average.values.data[i] * n + state_.theta.values.data[i]) / (n + real(1));
    }
  }
  ++state_.swa_count;
}

const ParamVector& Trainer::eval_params() const {
  if (cfg_.mode == TrainMode::kSatSwa && state_.swa_count > 0) return state_.swa_average;
  return state_.theta;
}

Checkpoint Trainer::make_checkpoint(const ParamVector& params, int epoch) const {
  Checkpoint c;
  c.spec = spec_;
  c.params = params;
  c.metadata["seed"] = std::to_string(cfg_.seed);
  c.metadata["epoch"] = std::to_string(epoch);
  c.metadata["mode"] = mode_name(cfg_.mode);
  c.metadata["gamma"] = fmt_real(double(cfg_.gamma));
  if (cfg_.sd) {
    c.metadata["mu"] = fmt_real(double(cfg_.sd->mu));
    c.metadata["tau"] = fmt_real(double(cfg_.sd->tau));
  }
  return c;
}

TrainResult Trainer::train(const Dataset& train_set, const Dataset& test_set) {
  if (train_set.size() == 0 || test_set.size() == 0) {
    throw ValueError("train: empty dataset");
  }
  TrainResult result;
  real best_ra = real(-1);
  int zero_ra_streak = 0;
  EvalOptions eval_opts{cfg_.eval_batch_size, cfg_.eval_threads};

  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    state_.epoch = epoch;
    lr_ = schedule_lr(cfg_.scheduler, cfg_.lr, epoch, cfg_.epochs);
    auto t0 = std::chrono::steady_clock::now();

    BatchSequence batches(train_set, cfg_.batch_size, split_seed(cfg_.seed, "data"),
                          std::uint64_t(epoch));
    real loss_sum = 0;
    for (std::size_t i = 0; i < batches.batch_count(); ++i) {
      real loss;
      try {
        loss = step(batches.batch(i));
      } catch (const NumericError& e) {
        result.aborted = true;
        result.collapse_flagged = true;
        result.collapse_epoch = epoch;
        result.abort_reason = "numerical overflow at epoch " + std::to_string(epoch) +
                              " iteration " + std::to_string(state_.iteration) + ": " + e.what();
        break;
      }
      if (!std::isfinite(loss)) {
        result.aborted = true;
        result.collapse_flagged = true;
        result.collapse_epoch = epoch;
        result.abort_reason = "non-finite training loss at epoch " + std::to_string(epoch) +
                              " iteration " + std::to_string(state_.iteration);
        break;
      }
      loss_sum += loss;
    }
    if (result.aborted) break;

    if (cfg_.mode == TrainMode::kSatSwa && epoch >= cfg_.swa_start_epoch) swa_update();

    const ParamVector& weights = eval_params();
    real sa = standard_accuracy(spec_, weights, test_set, eval_opts);
    RobustResult rob = robust_eval(spec_, weights, test_set, cfg_.eval_attack,
                                   split_seed(cfg_.seed, "eval", std::uint64_t(epoch)), eval_opts);
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    result.metrics.push_back({epoch, loss_sum / real(batches.batch_count()), sa, rob.accuracy,
                              rob.mean_loss, lr_, seconds});

    if (rob.accuracy == real(0)) {
      if (++zero_ra_streak >= 3 && !result.collapse_flagged) {
        result.collapse_flagged = true;
        result.collapse_epoch = epoch;
      }
    } else {
      zero_ra_streak = 0;
    }

    if (rob.accuracy > best_ra) {
      best_ra = rob.accuracy;
      result.best_epoch = epoch;
      result.best_checkpoint = make_checkpoint(weights, epoch);
    }
  }

  result.final_checkpoint = make_checkpoint(eval_params(), state_.epoch);
  if (result.best_epoch < 0) {  // aborted before any evaluation
    result.best_checkpoint = result.final_checkpoint;
  }
  return result;
}

SmoothProblem quadratic_problem(Tensor target, Tensor theta0, Tensor shift) {
  if (!shift.data.empty() && !shift.same_shape(target)) {
    throw ShapeError("quadratic_problem: shift shape mismatch");
  }
  Tensor center = target;
  for (std::size_t i = 0; i < shift.data.size(); ++i) center.data[i] += shift.data[i];
  SmoothProblem p;
  p.theta0 = std::move(theta0);
  p.grad = [center](const Tensor& w) {
    Tensor g = w;
    for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] -= center.data[i];
    return g;
  };
  return p;
}

CauchyTrace cauchy_harness(real gamma, real beta, int steps, const SmoothProblem& problem,
                           std::size_t window) {
  if (sizeof(real) != 8) throw ValueError("cauchy_harness: 64-bit build required");
  CauchyTrace trace;
  Tensor theta = problem.theta0;
  Tensor omega = problem.theta0;
  trace.thetas.push_back(theta);

  int growth_streak = 0;
  real prev_norm = -1;
  for (int i = 0; i < steps; ++i) {
    Tensor grad = problem.grad(omega);
    Tensor omega_tilde = omega;
    for (std::size_t e = 0; e < omega_tilde.numel(); ++e) {
      omega_tilde.data[e] -= beta * grad.data[e];
    }
    real inc_sq = 0, diff_sq = 0;
    Tensor next = theta;
    for (std::size_t e = 0; e < theta.numel(); ++e) {
      real d = theta.data[e] - omega_tilde.data[e];
      real inc = gamma * d;
      next.data[e] = theta.data[e] - inc;
      inc_sq += inc * inc;
      diff_sq += d * d;
    }
    real step_norm = std::sqrt(inc_sq);
    real scaled = gamma * std::sqrt(diff_sq);
    trace.step_norms.push_back(step_norm);
    trace.scaled_proxy_norms.push_back(scaled);
    real denom = std::max(std::abs(step_norm), std::abs(scaled));
    trace.max_identity_rel_err =
        std::max(trace.max_identity_rel_err,
                 denom == real(0) ? real(0) : std::abs(step_norm - scaled) / denom);

    omega = theta;
    theta = std::move(next);
    trace.thetas.push_back(theta);

    if (prev_norm >= real(0) && step_norm > prev_norm) {
      if (++growth_streak >= 50) trace.diverged = true;
    } else {
      growth_streak = 0;
    }
    prev_norm = step_norm;
  }

  std::size_t w = std::min(window, trace.thetas.size());
  real worst = 0;
  std::size_t start = trace.thetas.size() - w;
  for (std::size_t a = start; a < trace.thetas.size(); ++a) {
    for (std::size_t b = a + 1; b < trace.thetas.size(); ++b) {
      real s = 0;
      for (std::size_t e = 0; e < trace.thetas[a].numel(); ++e) {
        real d = trace.thetas[a].data[e] - trace.thetas[b].data[e];
        s += d * d;
      }
      worst = std::max(worst, std::sqrt(s));
    }
  }
  trace.trailing_max_pairwise = worst;
  return trace;
}

}  // namespace last
