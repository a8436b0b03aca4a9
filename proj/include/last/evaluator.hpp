#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "last/attack.hpp"
#include "last/checkpoint.hpp"
#include "last/data.hpp"

namespace last {

struct EvalOptions {
  std::size_t batch_size = 256;
  int threads = 1;
};

struct Model {
  std::string id;
  NetworkSpec spec;
  ParamVector params;
};

// Argmax accuracy in percent; ties break to the lowest class index.
real standard_accuracy(const NetworkSpec& spec, const ParamVector& params, const Dataset& dataset,
                       const EvalOptions& opts = {});

// An example counts as robust only when it stays correctly classified under
// every restart's final iterate. robust_accuracy(eps = 0) equals
// standard_accuracy exactly.
struct RobustResult {
  real accuracy = 0;   // percent
  real mean_loss = 0;  // mean per-example worst-restart attack loss
};

RobustResult robust_eval(const NetworkSpec& spec, const ParamVector& params,
                         const Dataset& dataset, const AttackConfig& attack, std::uint64_t seed,
                         const EvalOptions& opts = {});

real robust_accuracy(const NetworkSpec& spec, const ParamVector& params, const Dataset& dataset,
                     const AttackConfig& attack, std::uint64_t seed, const EvalOptions& opts = {});

// Entry (s, t): robust accuracy of target t against examples crafted on
// source s. The diagonal reproduces each model's white-box robust accuracy
// bit for bit when given the same seed. extra_sources adds rows only (the
// "standard" clean-trained source of the transfer protocol).
struct TransferMatrix {
  std::vector<std::string> sources, targets;
  std::vector<std::vector<real>> ra;
  AttackConfig attack;
};

TransferMatrix transfer_matrix(const std::vector<Model>& models, const Dataset& dataset,
                               const AttackConfig& attack, std::uint64_t seed,
                               const EvalOptions& opts = {},
                               const std::vector<Model>& extra_sources = {});

// Attack-loss surface over u + x*iota + y*o: iota is the sign of the input
// gradient at the clean sample, o a Rademacher direction. The probe is
// evaluated without the pixel-box clamp.
struct LandscapeGrid {
  std::vector<real> xs, ys;
  std::vector<std::vector<real>> losses;  // losses[i][j] at (xs[i], ys[j])
  real gap = 0;                           // max - min
  Tensor iota, o;
  std::string sample_id;
};

LandscapeGrid landscape_grid(const NetworkSpec& spec, const ParamVector& params,
                             const Tensor& sample, int label, real range, std::size_t resolution,
                             std::uint64_t seed, std::string sample_id = {});

// Per-channel |input gradient| of the attack loss, each channel min-max
// normalized to [0,1]; channels with range below 1e-12 come back all zero.
// Output shape (C, H, W).
Tensor input_gradient_map(const NetworkSpec& spec, const ParamVector& params, const Tensor& sample,
                          int label, const ChannelLayout& layout);

// Out-of-distribution copy of a dataset: every example mixed with a seeded
// partner under per-example lambda from U[0.5, 1]; labels follow the
// dominant component.
Dataset mixup_dataset(const Dataset& dataset, std::uint64_t seed);

void write_landscape_csv(const std::string& csv_path, const std::string& sidecar_path,
                         const LandscapeGrid& grid, std::uint64_t seed, real range);
void write_transfer_csv(const std::string& path, const TransferMatrix& tm);

}  // namespace last
