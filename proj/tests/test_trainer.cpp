#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "last/trainer.hpp"
#include "last/rng.hpp"
#include "oracles.hpp"

using namespace last;

namespace {

ParamVector scalar_params(real v) {
  ParamVector p;
  p.values = Tensor({1}, {v});
  p.layout = {{"w0", 0, {1}}};
  return p;
}

TrainConfig small_config(TrainMode mode, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.seed = seed;
  cfg.epochs = 2;
  cfg.lr = 0.05;
  cfg.batch_size = 8;
  cfg.attack.epsilon = 0.05;
  cfg.attack.alpha = 0.0625;
  cfg.attack.steps = 1;
  cfg.eval_attack = pgd10(0.05);
  return cfg;
}

const NetworkSpec kSmallSpec{6, {8}, 3};

Dataset small_data(std::uint64_t seed) { return synth_blobs(3, 16, 6, 0.5, seed); }

}  // namespace

TEST_CASE("sgd_step: plain gradient step") {
  ParamVector p = scalar_params(1.0);
  ParamVector g = scalar_params(2.0);
  ParamVector buf = scalar_params(0.0);
  sgd_step(p, g, 0.1, buf, 0.0, 0.0);
  CHECK(p.values.data[0] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("sgd_step: two momentum steps follow the buffer recurrence") {
  ParamVector p = scalar_params(0.0);
  ParamVector g = scalar_params(1.0);
  ParamVector buf = scalar_params(0.0);
  sgd_step(p, g, 1.0, buf, 0.5, 0.0);
  CHECK(p.values.data[0] == doctest::Approx(-1.0).epsilon(1e-15));
  sgd_step(p, g, 1.0, buf, 0.5, 0.0);
  CHECK(p.values.data[0] == doctest::Approx(-2.5).epsilon(1e-15));
}

TEST_CASE("sgd_step with m=0, wd=0 equals the textbook step exactly") {
  Rng rng(3);
  ParamVector p = scalar_params(0), g = scalar_params(0), buf = scalar_params(0);
  p.values = Tensor::zeros({20});
  g.values = Tensor::zeros({20});
  buf.values = Tensor::zeros({20});
  p.layout = g.layout = buf.layout = {{"w0", 0, {20}}};
  for (real& v : p.values.data) v = rng.uniform(-1, 1);
  for (real& v : g.values.data) v = rng.uniform(-1, 1);
  ParamVector expect = p;
  for (std::size_t i = 0; i < 20; ++i) expect.values.data[i] -= real(0.07) * g.values.data[i];
  sgd_step(p, g, 0.07, buf, 0.0, 0.0);
  CHECK(oracle::bits_equal(p, expect));
}

TEST_CASE("optimizer defaults: momentum 0.9, weight decay 5e-4") {
  OptimizerConfig opt;
  CHECK(opt.momentum == doctest::Approx(0.9));
  CHECK(opt.weight_decay == doctest::Approx(5e-4));
}

TEST_CASE("sgd_step rejects layout mismatches") {
  ParamVector p = scalar_params(1.0), buf = scalar_params(0.0);
  ParamVector g;
  g.values = Tensor::zeros({2});
  g.layout = {{"w0", 0, {2}}};
  CHECK_THROWS_AS(sgd_step(p, g, 0.1, buf, 0.0, 0.0), ShapeError);
}

TEST_CASE("learning-rate schedules") {
  SchedulerConfig cyc;
  cyc.kind = SchedulerConfig::Kind::kCyclic;
  cyc.max_lr = 0.2;
  CHECK(schedule_lr(cyc, 0.2, 0, 30) == doctest::Approx(0.0));
  CHECK(schedule_lr(cyc, 0.2, 15, 30) == doctest::Approx(0.2));
  CHECK(schedule_lr(cyc, 0.2, 29, 30) == doctest::Approx(0.2 / 15.0));

  SchedulerConfig ms;
  ms.kind = SchedulerConfig::Kind::kMultistep;
  ms.milestones = {100, 150};
  ms.factor = 0.1;
  CHECK(schedule_lr(ms, 0.1, 120, 200) == doctest::Approx(0.01));
  CHECK(schedule_lr(ms, 0.1, 99, 200) == doctest::Approx(0.1));
  CHECK(schedule_lr(ms, 0.1, 160, 200) == doctest::Approx(0.001));

  SchedulerConfig c;
  CHECK(schedule_lr(c, 0.05, 7, 10) == doctest::Approx(0.05));
  CHECK_THROWS_AS(schedule_lr(c, 0.05, 10, 10), ValueError);
}

TEST_CASE("train config validation") {
  TrainConfig cfg = small_config(TrainMode::kSat, 1);
  CHECK_NOTHROW(cfg.validate());
  cfg.gamma = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValueError);
  cfg.gamma = 1.1;
  CHECK_THROWS_AS(cfg.validate(), ValueError);
  cfg.gamma = 1.0;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("sat_step with epsilon 0 reduces to one clean SGD step") {
  TrainConfig cfg = small_config(TrainMode::kSat, 5);
  cfg.attack.epsilon = 0;
  cfg.optimizer = {0.0, 0.0};
  Trainer trainer(kSmallSpec, cfg);
  Dataset d = small_data(6);
  BatchSequence seq(d, cfg.batch_size, 1, 0);
  Batch b = seq.batch(0);

  // expected clean step computed independently
  ParamVector before = trainer.state().theta;
  Graph g;
  NodeId in = g.leaf(b.inputs.shape, false);
  auto leaves = add_param_leaves(g, kSmallSpec, true);
  NodeId logits = add_forward(g, kSmallSpec, leaves, in);
  NodeId loss = append_cross_entropy(g, logits, b.labels);
  bind_params(g, leaves, before);
  g.bind(in, b.inputs);
  g.forward_eval(loss);
  ParamVector grads = flatten_grads(kSmallSpec, leaves, g.backward_grad(loss), before);
  ParamVector expect = before;
  axpy(expect, -cfg.lr, grads);

  trainer.set_lr(cfg.lr);
  trainer.sat_step(b);
  CHECK(max_rel_diff(trainer.state().theta, expect) < 1e-12);
}

TEST_CASE("identical seeds give bit-identical parameters") {
  TrainConfig cfg = small_config(TrainMode::kSat, 9);
  Trainer t1(kSmallSpec, cfg), t2(kSmallSpec, cfg);
  Dataset d = small_data(2);
  BatchSequence seq(d, cfg.batch_size, 3, 0);
  for (std::size_t i = 0; i < seq.batch_count(); ++i) {
    t1.sat_step(seq.batch(i));
    t2.sat_step(seq.batch(i));
  }
  CHECK(oracle::bits_equal(t1.state().theta, t2.state().theta));
}

TEST_CASE("last_step keeps the aggregation algebra and records omega") {
  TrainConfig cfg = small_config(TrainMode::kLast, 13);
  cfg.gamma = 0.8;
  Trainer trainer(kSmallSpec, cfg);
  Dataset d = small_data(7);
  BatchSequence seq(d, cfg.batch_size, 5, 0);

  CHECK(oracle::bits_equal(trainer.state().omega, trainer.state().theta));  // omega_0 = theta_0

  int checked = 0;
  trainer.set_step_observer([&](const StepTrace& t) {
    // theta_{i+1} = (1-gamma) theta_i + gamma omega_tilde
    for (std::size_t i = 0; i < t.theta_after.size(); ++i) {
      real expect = (1 - cfg.gamma) * t.theta_before.values.data[i] +
                    cfg.gamma * t.omega_tilde.values.data[i];
      real got = t.theta_after.values.data[i];
      real denom = std::max({std::abs(expect), std::abs(got), real(1e-8)});
      CHECK(std::abs(expect - got) / denom < 1e-6);
    }
    // omega_{i+1} is a bit-identical copy of the pre-step theta
    CHECK(oracle::bits_equal(t.omega_after, t.theta_before));
    // norm identity of the update rule
    real denom = std::max(t.step_norm, t.scaled_proxy_norm);
    CHECK(std::abs(t.step_norm - t.scaled_proxy_norm) <= 1e-12 * denom);
    ++checked;
  });
  for (std::size_t i = 0; i < seq.batch_count(); ++i) trainer.last_step(seq.batch(i));
  CHECK(checked == int(seq.batch_count()));
}

TEST_CASE("first step with gamma = 1 and omega_0 = theta_0 matches the SAT step") {
  TrainConfig sat_cfg = small_config(TrainMode::kSat, 31);
  TrainConfig last_cfg = sat_cfg;
  last_cfg.mode = TrainMode::kLast;
  last_cfg.gamma = 1.0;
  Trainer sat(kSmallSpec, sat_cfg), last(kSmallSpec, last_cfg);
  Dataset d = small_data(8);
  Batch b = BatchSequence(d, sat_cfg.batch_size, 5, 0).batch(0);
  sat.sat_step(b);
  last.last_step(b);
  CHECK(max_rel_diff(sat.state().theta, last.state().theta) < 1e-12);
}

TEST_CASE("swa_update maintains the running mean of theta snapshots") {
  TrainConfig cfg = small_config(TrainMode::kSatSwa, 2);
  Trainer trainer(kSmallSpec, cfg);

  trainer.swa_update();
  CHECK(oracle::bits_equal(trainer.state().swa_average, trainer.state().theta));  // first = theta

  // drive theta by hand: snapshots theta_k = k over 5 updates -> mean 3
  Trainer t2(kSmallSpec, cfg);
  std::vector<ParamVector> snapshots;
  for (int k = 1; k <= 5; ++k) {
    for (real& v : t2.state().theta.values.data) v = real(k);
    snapshots.push_back(t2.state().theta);
    t2.swa_update();
  }
  for (real v : t2.state().swa_average.values.data) CHECK(v == doctest::Approx(3.0).epsilon(1e-12));

  // against the direct mean, within 1e-10 relative
  ParamVector direct = zeros_like(snapshots[0]);
  for (const auto& s : snapshots) axpy(direct, real(1.0 / 5.0), s);
  CHECK(max_rel_diff(t2.state().swa_average, direct, 1e-10) < 1e-10);
}

TEST_CASE("two swa updates average the two snapshots") {
  TrainConfig cfg = small_config(TrainMode::kSatSwa, 3);
  Trainer t(kSmallSpec, cfg);
  ParamVector a = t.state().theta;
  t.swa_update();
  for (real& v : t.state().theta.values.data) v += 1.0;
  ParamVector b = t.state().theta;
  t.swa_update();
  for (std::size_t i = 0; i < a.size(); ++i) {
    real expect = (a.values.data[i] + b.values.data[i]) / 2;
    CHECK(t.state().swa_average.values.data[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("train: one epoch over one batch with epsilon 0 is one clean step") {
  TrainConfig cfg = small_config(TrainMode::kSat, 17);
  cfg.epochs = 1;
  cfg.batch_size = 64;  // >= dataset size -> M = 1
  cfg.attack.epsilon = 0;
  cfg.eval_attack.epsilon = 0;
  Trainer trainer(kSmallSpec, cfg);
  Dataset train_set = small_data(3), test_set = small_data(4);
  TrainResult r = trainer.train(train_set, test_set);
  CHECK(r.metrics.size() == 1);
  CHECK(trainer.state().iteration == 1);
  CHECK_FALSE(r.aborted);
  CHECK(r.metrics[0].sa == r.metrics[0].ra);  // eval at eps 0
  CHECK(r.best_epoch == 0);
  CHECK(r.final_checkpoint.metadata.at("mode") == "SAT");
}

TEST_CASE("train runs are reproducible record for record") {
  TrainConfig cfg = small_config(TrainMode::kLast, 23);
  Dataset train_set = small_data(5), test_set = small_data(6);
  TrainResult a = Trainer(kSmallSpec, cfg).train(train_set, test_set);
  TrainResult b = Trainer(kSmallSpec, cfg).train(train_set, test_set);
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    CHECK(a.metrics[i].train_loss == b.metrics[i].train_loss);
    CHECK(a.metrics[i].sa == b.metrics[i].sa);
    CHECK(a.metrics[i].ra == b.metrics[i].ra);
    CHECK(a.metrics[i].robust_loss == b.metrics[i].robust_loss);
  }
  CHECK(oracle::bits_equal(a.final_checkpoint.params, b.final_checkpoint.params));
}

TEST_CASE("non-finite loss aborts the run with a diagnostic") {
  TrainConfig cfg = small_config(TrainMode::kSat, 29);
  cfg.lr = 1e120;  // forces the parameters to explode within a few steps
  cfg.epochs = 3;
  Trainer trainer(kSmallSpec, cfg);
  Dataset train_set = small_data(5), test_set = small_data(6);
  TrainResult r = trainer.train(train_set, test_set);
  CHECK(r.aborted);
  CHECK(r.collapse_flagged);
  CHECK_FALSE(r.abort_reason.empty());
}

TEST_CASE("checkpoint metadata records the run settings") {
  TrainConfig cfg = small_config(TrainMode::kLast, 3);
  cfg.epochs = 1;
  SDConfig sd;
  cfg.sd = sd;
  Trainer trainer(kSmallSpec, cfg);
  Dataset train_set = small_data(1), test_set = small_data(2);
  TrainResult r = trainer.train(train_set, test_set);
  CHECK(r.final_checkpoint.metadata.at("gamma") == "0.8");
  CHECK(r.final_checkpoint.metadata.at("mode") == "LAST");
  CHECK(r.final_checkpoint.metadata.at("mu") == "0.95");
  CHECK(r.final_checkpoint.metadata.at("tau") == "6.0");
  CHECK(r.final_checkpoint.metadata.at("seed") == "3");
}

// ---- theory harness ----

TEST_CASE("cauchy harness satisfies the norm identity and contracts on a quadratic") {
  Tensor target({4}, {1.0, -2.0, 0.5, 3.0});
  Tensor theta0({4}, {5.0, 5.0, -5.0, -4.0});
  SmoothProblem prob = quadratic_problem(target, theta0);
  CauchyTrace trace = cauchy_harness(0.8, 0.1, 500, prob);
  CHECK(trace.max_identity_rel_err <= 1e-12);
  CHECK(trace.trailing_max_pairwise < 1e-8);
  CHECK_FALSE(trace.diverged);
}

TEST_CASE("cauchy harness matches the closed-form linear recurrence") {
  // with L(w) = 0.5||w - c||^2 the update is linear:
  // (theta', omega') = ((1-g) theta + g(1-b) omega + g*b*c, theta)
  const double g = 0.8, b = 0.1;
  Tensor target({2}, {1.0, -2.0});
  Tensor theta0({2}, {4.0, 0.5});
  SmoothProblem prob = quadratic_problem(target, theta0);
  CauchyTrace trace = cauchy_harness(g, b, 200, prob);

  for (std::size_t e = 0; e < 2; ++e) {
    double th = double(theta0.data[e]), om = double(theta0.data[e]);
    double c = double(target.data[e]);
    for (int i = 0; i < 200; ++i) {
      double next = (1 - g) * th + g * (1 - b) * om + g * b * c;
      om = th;
      th = next;
    }
    CHECK(double(trace.thetas[200].data[e]) == doctest::Approx(th).epsilon(1e-9));
    CHECK(double(trace.thetas[200].data[e]) == doctest::Approx(c).epsilon(1e-6));
  }
}

TEST_CASE("gamma 0 freezes theta in the harness") {
  Tensor target({3}, {1.0, 2.0, 3.0});
  Tensor theta0({3}, {-1.0, 0.0, 4.0});
  SmoothProblem prob = quadratic_problem(target, theta0);
  CauchyTrace trace = cauchy_harness(0.0, 0.1, 50, prob);
  for (const Tensor& t : trace.thetas) CHECK(oracle::bits_equal(t, theta0));
}

TEST_CASE("fixed perturbation shifts the quadratic's fixed point") {
  Tensor target({2}, {1.0, 1.0});
  Tensor shift({2}, {0.25, -0.25});
  Tensor theta0({2}, {0.0, 0.0});
  SmoothProblem prob = quadratic_problem(target, theta0, shift);
  CauchyTrace trace = cauchy_harness(0.8, 0.1, 500, prob);
  CHECK(double(trace.thetas.back().data[0]) == doctest::Approx(1.25).epsilon(1e-6));
  CHECK(double(trace.thetas.back().data[1]) == doctest::Approx(0.75).epsilon(1e-6));
}
