#pragma once

// Hand-rolled reference implementations for the test suites. Everything here
// is straight-line loop code with no graph machinery, so it can serve as an
// independent oracle for the library's outputs.

#include <cmath>
#include <cstring>
#include <vector>

#include "last/net.hpp"

namespace oracle {

using last::NetworkSpec;
using last::ParamVector;
using last::real;
using last::Tensor;

// Plain loop forward pass: affine + relu chain straight off the layout.
inline std::vector<real> mlp_forward(const NetworkSpec& spec, const ParamVector& params,
                                     const std::vector<real>& input) {
  std::vector<real> act = input;
  std::size_t n_layers = spec.hidden.size() + 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& we = params.layout[2 * l];
    const auto& be = params.layout[2 * l + 1];
    std::size_t din = we.shape[0], dout = we.shape[1];
    std::vector<real> next(dout);
    for (std::size_t j = 0; j < dout; ++j) {
      real s = params.values.data[be.offset + j];
      for (std::size_t i = 0; i < din; ++i) {
        s += act[i] * params.values.data[we.offset + i * dout + j];
      }
      next[j] = s;
    }
    if (l + 1 < n_layers) {
      for (real& v : next) v = v > 0 ? v : 0;
    }
    act = std::move(next);
  }
  return act;
}

inline real logsumexp(const std::vector<real>& v) {
  real m = v[0];
  for (real x : v) m = std::max(m, x);
  real s = 0;
  for (real x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline real ce_row(const std::vector<real>& logits, int label) {
  return logsumexp(logits) - logits[std::size_t(label)];
}

inline std::vector<real> softmax(const std::vector<real>& logits, real tau = 1) {
  std::vector<real> out(logits.size());
  std::vector<real> scaled(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / tau;
  real lse = logsumexp(scaled);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = std::exp(scaled[i] - lse);
  return out;
}

inline real kl_row(const std::vector<real>& student, const std::vector<real>& teacher, real tau) {
  auto q = softmax(student, tau);
  auto p = softmax(teacher, tau);
  real kl = 0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  return kl;
}

inline std::vector<real> row_of(const Tensor& t, std::size_t r) {
  std::size_t c = t.shape.back();
  return std::vector<real>(t.data.begin() + r * c, t.data.begin() + (r + 1) * c);
}

inline bool bits_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(real)) == 0;
}

inline bool bits_equal(const ParamVector& a, const ParamVector& b) {
  return bits_equal(a.values, b.values);
}

inline real max_abs_diff(const Tensor& a, const Tensor& b) {
  real worst = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
  }
  return worst;
}

}  // namespace oracle
