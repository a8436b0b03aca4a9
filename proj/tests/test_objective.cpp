#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "last/objective.hpp"
#include "last/net.hpp"
#include "last/rng.hpp"
#include "oracles.hpp"

using namespace last;

TEST_CASE("cross entropy of uniform logits is ln C") {
  Tensor logits = Tensor::zeros({3, 10});
  CHECK(cross_entropy(logits, {0, 5, 9}) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy saturates near zero for a dominant true logit") {
  Tensor logits = Tensor::zeros({1, 10});
  logits.at(0, 4) = 1000;
  CHECK(cross_entropy(logits, {4}) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(std::isfinite(cross_entropy(logits, {4})));
}

TEST_CASE("cross entropy closed form: logits (0, ln 3), label 1") {
  Tensor logits({1, 2}, {0.0, std::log(3.0)});
  CHECK(cross_entropy(logits, {1}) == doctest::Approx(-std::log(0.75)).epsilon(1e-12));
}

TEST_CASE("cross entropy rejects out-of-range labels") {
  Tensor logits = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(cross_entropy(logits, {0, 3}), ValueError);
  CHECK_THROWS_AS(cross_entropy(logits, {-1, 0}), ValueError);
}

TEST_CASE("kl_temperature of identical logits is zero") {
  Rng rng(4);
  Tensor s = Tensor::zeros({4, 6});
  for (real& v : s.data) v = rng.uniform(-3, 3);
  CHECK(std::abs(kl_temperature(s, s, 2.5)) < 1e-12);
}

TEST_CASE("kl_temperature is nonnegative on random pairs") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    Tensor s = Tensor::zeros({3, 5}), t = Tensor::zeros({3, 5});
    for (real& v : s.data) v = rng.uniform(-4, 4);
    for (real& v : t.data) v = rng.uniform(-4, 4);
    real tau = rng.uniform(0.5, 8);
    CHECK(kl_temperature(s, t, tau) >= 0.0);
  }
}

TEST_CASE("kl_temperature closed form") {
  // teacher softmax = (0.25, 0.75), student = (0.5, 0.5)
  Tensor s({1, 2}, {0.0, 0.0});
  Tensor t({1, 2}, {0.0, std::log(3.0)});
  real expect = 0.25 * std::log(0.25 / 0.5) + 0.75 * std::log(0.75 / 0.5);
  CHECK(kl_temperature(s, t, 1.0) == doctest::Approx(expect).epsilon(1e-9));
  CHECK(kl_temperature(s, t, 1.0) == doctest::Approx(0.130812).epsilon(1e-4));
  // tau^2 scaling multiplies the value
  CHECK(kl_temperature(s, t, 1.0, true) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("kl_temperature against the loop oracle under temperature") {
  Rng rng(8);
  Tensor s = Tensor::zeros({3, 4}), t = Tensor::zeros({3, 4});
  for (real& v : s.data) v = rng.uniform(-2, 2);
  for (real& v : t.data) v = rng.uniform(-2, 2);
  real tau = 6.0;
  real expect = 0;
  for (std::size_t r = 0; r < 3; ++r) {
    expect += oracle::kl_row(oracle::row_of(s, r), oracle::row_of(t, r), tau);
  }
  expect /= 3;
  CHECK(kl_temperature(s, t, tau) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(kl_temperature(s, t, tau, true) == doctest::Approx(tau * tau * expect).epsilon(1e-12));
}

TEST_CASE("kl_temperature rejects tau <= 0") {
  Tensor s = Tensor::zeros({1, 2});
  CHECK_THROWS_AS(kl_temperature(s, s, 0.0), ValueError);
  CHECK_THROWS_AS(kl_temperature(s, s, -1.0), ValueError);
}

TEST_CASE("sd_loss with mu = 0 is cross entropy bit for bit") {
  Rng rng(6);
  Tensor clean = Tensor::zeros({4, 5}), adv = Tensor::zeros({4, 5});
  for (real& v : clean.data) v = rng.uniform(-2, 2);
  for (real& v : adv.data) v = rng.uniform(-2, 2);
  std::vector<int> labels{0, 4, 2, 1};
  SDConfig sd;
  sd.mu = 0;
  real a = sd_loss(clean, adv, labels, sd);
  real b = cross_entropy(adv, labels);
  CHECK(a == b);
}

TEST_CASE("sd_loss with identical logits reduces to (1-mu)*CE") {
  Rng rng(7);
  Tensor logits = Tensor::zeros({3, 4});
  for (real& v : logits.data) v = rng.uniform(-2, 2);
  std::vector<int> labels{1, 0, 3};
  SDConfig sd;
  sd.mu = 0.6;
  sd.tau = 4.0;
  real expect = (1 - sd.mu) * cross_entropy(logits, labels);
  CHECK(sd_loss(logits, logits, labels, sd) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("sd defaults follow the common distillation settings") {
  SDConfig sd;
  CHECK(sd.mu == doctest::Approx(0.95));
  CHECK(sd.tau == doctest::Approx(6.0));
  CHECK(sd.detach_clean);
  CHECK_FALSE(sd.tau_squared_scale);
}

TEST_CASE("sd_loss is continuous in mu near 0") {
  Rng rng(10);
  Tensor clean = Tensor::zeros({2, 3}), adv = Tensor::zeros({2, 3});
  for (real& v : clean.data) v = rng.uniform(-1, 1);
  for (real& v : adv.data) v = rng.uniform(-1, 1);
  std::vector<int> labels{0, 2};
  SDConfig sd;
  sd.mu = 1e-9;
  real at_eps = sd_loss(clean, adv, labels, sd);
  sd.mu = 0;
  real at_zero = sd_loss(clean, adv, labels, sd);
  CHECK(std::abs(at_eps - at_zero) < 1e-6);
}

TEST_CASE("sd config validation") {
  SDConfig sd;
  sd.mu = 1.0;
  CHECK_THROWS_AS(sd.validate(), ValueError);
  sd.mu = -0.1;
  CHECK_THROWS_AS(sd.validate(), ValueError);
  sd.mu = 0.5;
  sd.tau = 0;
  CHECK_THROWS_AS(sd.validate(), ValueError);
}

TEST_CASE("sd_loss gradients check out with and without a detached clean branch") {
  NetworkSpec spec{3, {4}, 3};
  ParamVector params = init_params(spec, 15);
  Rng rng(16);
  Tensor clean_in = Tensor::zeros({2, 3}), adv_in = Tensor::zeros({2, 3});
  for (real& v : clean_in.data) v = rng.uniform(0, 1);
  for (real& v : adv_in.data) v = rng.uniform(0, 1);
  std::vector<int> labels{0, 2};
  SDConfig sd;
  sd.mu = 0.95;
  sd.tau = 6.0;

  SUBCASE("shared two-tower graph") {
    Graph g;
    NodeId ci = g.leaf({2, 3}, false), ai = g.leaf({2, 3}, false);
    auto leaves = add_param_leaves(g, spec, true);
    NodeId cl = add_forward(g, spec, leaves, ci);
    NodeId al = add_forward(g, spec, leaves, ai);
    NodeId loss = append_sd_loss(g, cl, al, labels, sd);
    bind_params(g, leaves, params);
    g.bind(ci, clean_in);
    g.bind(ai, adv_in);
    g.forward_eval(loss);
    for (NodeId p : leaves) CHECK(g.finite_diff_check(loss, p, 1e-5) < 1e-5);
  }
  SUBCASE("detached clean targets are constants") {
    Tensor clean_logits = predict_logits(spec, params, clean_in);
    Graph g;
    NodeId cl = g.leaf({2, 3}, false), ai = g.leaf({2, 3}, false);
    auto leaves = add_param_leaves(g, spec, true);
    NodeId al = add_forward(g, spec, leaves, ai);
    NodeId loss = append_sd_loss(g, cl, al, labels, sd);
    bind_params(g, leaves, params);
    g.bind(cl, clean_logits);
    g.bind(ai, adv_in);
    g.forward_eval(loss);
    for (NodeId p : leaves) CHECK(g.finite_diff_check(loss, p, 1e-5) < 1e-5);
  }
}

TEST_CASE("mixup with lambda = 1 returns batch a bitwise") {
  Dataset d = synth_blobs(2, 4, 5, 0.5, 40);
  Batch a = slice_batch(d, 0, 4), b = slice_batch(d, 4, 8);
  Batch m = mixup_batch(a, b, 1.0, 9);
  CHECK(oracle::bits_equal(m.inputs, a.inputs));
  CHECK(m.labels == a.labels);
}

TEST_CASE("mixup of identical inputs is the same image") {
  Dataset d = synth_blobs(2, 4, 5, 0.5, 41);
  Batch a = slice_batch(d, 0, 4);
  Batch m = mixup_batch(a, a, 0.5, 9);
  for (std::size_t i = 0; i < m.inputs.numel(); ++i) {
    CHECK(m.inputs.data[i] == doctest::Approx(a.inputs.data[i]).epsilon(1e-15));
  }
}

TEST_CASE("mixup pixel arithmetic: 0.7*1 + 0.3*0") {
  Batch a, b;
  a.inputs = Tensor({1, 1}, {1.0});
  a.labels = {1};
  b.inputs = Tensor({1, 1}, {0.0});
  b.labels = {0};
  Batch m = mixup_batch(a, b, 0.7, 1);
  CHECK(m.inputs.data[0] == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(m.labels == std::vector<int>{1});
}

TEST_CASE("mixup lambda outside [0.5, 1] is rejected; unset lambda stays inside") {
  Batch a, b;
  a.inputs = Tensor::zeros({3, 2});
  a.labels = {0, 1, 0};
  b.inputs = Tensor::full({3, 2}, 1.0);
  b.labels = {1, 0, 1};
  CHECK_THROWS_AS(mixup_batch(a, b, 0.3, 1), ValueError);
  CHECK_THROWS_AS(mixup_batch(a, b, 1.2, 1), ValueError);
  Batch m = mixup_batch(a, b, std::nullopt, 5);
  // a is all zeros, b all ones: the mix equals 1-lambda, so within [0, 0.5]
  for (real v : m.inputs.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 0.5);
  }
  CHECK(m.labels == a.labels);
}
