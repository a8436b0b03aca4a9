#include "last/evaluator.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "last/objective.hpp"
#include "last/rng.hpp"
#include "last/text.hpp"

namespace last {

namespace {

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  std::size_t c = logits.cols(), best = 0;
  for (std::size_t j = 1; j < c; ++j) {
    if (logits.at(row, j) > logits.at(row, best)) best = j;  // ties keep the lowest index
  }
  return best;
}

struct BatchRange {
  std::size_t begin, end;
};

std::vector<BatchRange> batch_ranges(std::size_t n, std::size_t batch_size) {
  std::vector<BatchRange> out;
  for (std::size_t b = 0; b < n; b += batch_size) out.push_back({b, std::min(b + batch_size, n)});
  return out;
}

// Deterministic fan-out: per-batch results land in indexed slots, reduction
// stays in batch order whatever the thread interleaving.
void parallel_batches(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::size_t t = std::min<std::size_t>(std::size_t(threads), count);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < t; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += t) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

real standard_accuracy(const NetworkSpec& spec, const ParamVector& params, const Dataset& dataset,
                       const EvalOptions& opts) {
  if (dataset.size() == 0) throw ValueError("standard_accuracy: empty dataset");
  auto ranges = batch_ranges(dataset.size(), opts.batch_size);
  std::vector<std::size_t> correct(ranges.size(), 0);
  parallel_batches(ranges.size(), opts.threads, [&](std::size_t i) {
    Batch b = slice_batch(dataset, ranges[i].begin, ranges[i].end);
    Tensor logits = predict_logits(spec, params, b.inputs);
    std::size_t c = 0;
    for (std::size_t e = 0; e < b.size(); ++e) {
      if (argmax_row(logits, e) == std::size_t(b.labels[e])) ++c;
    }
    correct[i] = c;
  });
  std::size_t total = 0;
  for (std::size_t c : correct) total += c;
  return real(100) * real(total) / real(dataset.size());
}

namespace {

struct RowAccum {
  std::vector<std::vector<char>> broken;  // [target][batch-local example]
  std::vector<real> worst_loss;           // source-side selected loss
};

// Shared walk behind robust_eval and transfer_matrix so the transfer
// diagonal and the white-box numbers come from the same arithmetic.
void attack_walk(const Model& source, const std::vector<const Model*>& targets,
                 const Dataset& dataset, const AttackConfig& attack, std::uint64_t seed,
                 const EvalOptions& opts, std::vector<std::vector<char>>& broken_out,
                 std::vector<real>& loss_out) {
  auto ranges = batch_ranges(dataset.size(), opts.batch_size);
  std::vector<RowAccum> acc(ranges.size());
  parallel_batches(ranges.size(), opts.threads, [&](std::size_t i) {
    Batch b = slice_batch(dataset, ranges[i].begin, ranges[i].end);
    RowAccum& a = acc[i];
    a.broken.assign(targets.size(), std::vector<char>(b.size(), 0));
    CraftHooks hooks;
    hooks.on_restart = [&](int, const Tensor& delta, const std::vector<real>&) {
      Perturbation p;
      p.delta = delta;
      Tensor adv = apply_perturbation(b.inputs, p, attack.pixel_box);
      for (std::size_t t = 0; t < targets.size(); ++t) {
        Tensor logits = predict_logits(targets[t]->spec, targets[t]->params, adv);
        for (std::size_t e = 0; e < b.size(); ++e) {
          if (argmax_row(logits, e) != std::size_t(b.labels[e])) a.broken[t][e] = 1;
        }
      }
    };
    Perturbation sel = craft_perturbation(source.spec, source.params, b, attack,
                                          split_seed(seed, "evalbatch", i), &hooks);
    a.worst_loss = std::move(sel.attack_loss);
  });

  broken_out.assign(targets.size(), {});
  loss_out.clear();
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    for (std::size_t t = 0; t < targets.size(); ++t) {
      broken_out[t].insert(broken_out[t].end(), acc[i].broken[t].begin(), acc[i].broken[t].end());
    }
    loss_out.insert(loss_out.end(), acc[i].worst_loss.begin(), acc[i].worst_loss.end());
  }
}

real percent_robust(const std::vector<char>& broken) {
  std::size_t ok = 0;
  for (char b : broken)
    if (!b) ++ok;
  return real(100) * real(ok) / real(broken.size());
}

}  // namespace

RobustResult robust_eval(const NetworkSpec& spec, const ParamVector& params,
                         const Dataset& dataset, const AttackConfig& attack, std::uint64_t seed,
                         const EvalOptions& opts) {
  if (dataset.size() == 0) throw ValueError("robust_eval: empty dataset");
  Model m{"self", spec, params};
  std::vector<std::vector<char>> broken;
  std::vector<real> losses;
  attack_walk(m, {&m}, dataset, attack, seed, opts, broken, losses);
  RobustResult r;
  r.accuracy = percent_robust(broken[0]);
  real s = 0;
  for (real l : losses) s += l;
  r.mean_loss = s / real(losses.size());
  return r;
}

real robust_accuracy(const NetworkSpec& spec, const ParamVector& params, const Dataset& dataset,
                     const AttackConfig& attack, std::uint64_t seed, const EvalOptions& opts) {
  return robust_eval(spec, params, dataset, attack, seed, opts).accuracy;
}

TransferMatrix transfer_matrix(const std::vector<Model>& models, const Dataset& dataset,
                               const AttackConfig& attack, std::uint64_t seed,
                               const EvalOptions& opts, const std::vector<Model>& extra_sources) {
  if (models.empty()) throw ValueError("transfer_matrix: need at least one model");
  for (const auto& m : models) {
    if (m.spec.input_dim != dataset.dim()) {
      throw ShapeError("transfer_matrix: model " + m.id + " input_dim " +
                       std::to_string(m.spec.input_dim) + " vs dataset dim " +
                       std::to_string(dataset.dim()));
    }
  }
  for (const auto& m : extra_sources) {
    if (m.spec.input_dim != dataset.dim()) {
      throw ShapeError("transfer_matrix: source " + m.id + " incompatible with dataset");
    }
  }

  TransferMatrix tm;
  tm.attack = attack;
  std::vector<const Model*> targets;
  for (const auto& m : models) {
    tm.targets.push_back(m.id);
    targets.push_back(&m);
  }
  std::vector<const Model*> sources;
  for (const auto& m : models) sources.push_back(&m);
  for (const auto& m : extra_sources) sources.push_back(&m);

  for (const Model* src : sources) {
    tm.sources.push_back(src->id);
    std::vector<std::vector<char>> broken;
    std::vector<real> losses;
    attack_walk(*src, targets, dataset, attack, seed, opts, broken, losses);
    std::vector<real> row;
    for (std::size_t t = 0; t < targets.size(); ++t) row.push_back(percent_robust(broken[t]));
    tm.ra.push_back(std::move(row));
  }
  return tm;
}

LandscapeGrid landscape_grid(const NetworkSpec& spec, const ParamVector& params,
                             const Tensor& sample, int label, real range, std::size_t resolution,
                             std::uint64_t seed, std::string sample_id) {
  if (resolution < 1) throw ValueError("landscape_grid: resolution must be >= 1");
  if (sample.rank() != 1) throw ShapeError("landscape_grid: sample must be rank 1");
  const std::size_t d = sample.numel();

  // sign-gradient direction at the clean sample
  ModelGraph m = build_model_graph(spec, 1, false, true);
  bind_params(m.graph, m.param_leaves, params);
  Tensor row({1, d}, sample.data);
  m.graph.bind(m.input, row);
  NodeId loss = append_cross_entropy(m.graph, m.logits, {label});
  real clean_loss = m.graph.forward_eval(loss).data[0];
  Tensor grad = m.graph.backward_grad(loss).at(m.input);

  LandscapeGrid grid;
  grid.sample_id = std::move(sample_id);
  grid.iota = Tensor::zeros({d});
  for (std::size_t i = 0; i < d; ++i) grid.iota.data[i] = sign0(grad.data[i]);
  grid.o = Tensor::zeros({d});
  Rng rng(split_seed(seed, "rademacher"));
  for (std::size_t i = 0; i < d; ++i) grid.o.data[i] = rng.rademacher();

  auto coords = [&](std::size_t k) {
    if (resolution == 1) return real(0);
    return range * (real(2) * real(k) / real(resolution - 1) - real(1));
  };
  for (std::size_t k = 0; k < resolution; ++k) grid.xs.push_back(coords(k));
  grid.ys = grid.xs;

  real lo = clean_loss, hi = clean_loss;
  grid.losses.assign(resolution, std::vector<real>(resolution, real(0)));
  for (std::size_t i = 0; i < resolution; ++i) {
    for (std::size_t j = 0; j < resolution; ++j) {
      real v;
      if (grid.xs[i] == real(0) && grid.ys[j] == real(0)) {
        v = clean_loss;
      } else {
        Tensor probe({1, d}, sample.data);
        for (std::size_t e = 0; e < d; ++e) {
          probe.data[e] += grid.xs[i] * grid.iota.data[e] + grid.ys[j] * grid.o.data[e];
        }
        Tensor logits = predict_logits(spec, params, probe);
        v = cross_entropy(logits, {label});
      }
      grid.losses[i][j] = v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  grid.gap = hi - lo;
  return grid;
}

Tensor input_gradient_map(const NetworkSpec& spec, const ParamVector& params, const Tensor& sample,
                          int label, const ChannelLayout& layout) {
  const std::size_t d = sample.numel();
  std::size_t c = layout.flat ? 1 : layout.channels;
  std::size_t h = layout.flat ? 1 : layout.height;
  std::size_t w = layout.flat ? d : layout.width;
  if (c * h * w != d) {
    throw ShapeError("input_gradient_map: layout " + std::to_string(c) + "x" + std::to_string(h) +
                     "x" + std::to_string(w) + " does not tile " + std::to_string(d) + " values");
  }

  ModelGraph m = build_model_graph(spec, 1, false, true);
  bind_params(m.graph, m.param_leaves, params);
  m.graph.bind(m.input, Tensor({1, d}, sample.data));
  NodeId loss = append_cross_entropy(m.graph, m.logits, {label});
  m.graph.forward_eval(loss);
  Tensor grad = m.graph.backward_grad(loss).at(m.input);

  Tensor out = Tensor::zeros({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::size_t base = ch * h * w;
    real lo = std::abs(grad.data[base]), hi = lo;
    for (std::size_t i = 0; i < h * w; ++i) {
      real v = std::abs(grad.data[base + i]);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    real span = hi - lo;
    if (span < real(1e-12)) continue;  // degenerate channel stays zero
    for (std::size_t i = 0; i < h * w; ++i) {
      out.data[base + i] = (std::abs(grad.data[base + i]) - lo) / span;
    }
  }
  return out;
}

Dataset mixup_dataset(const Dataset& dataset, std::uint64_t seed) {
  Dataset out = dataset;
  out.split = dataset.split.empty() ? "mixup" : dataset.split + "+mixup";
  Rng rng(split_seed(seed, "mixup-pairs"));
  auto partner = rng.permutation(dataset.size());
  Batch a{dataset.inputs, dataset.labels};
  Batch b;
  b.inputs = Tensor::zeros(dataset.inputs.shape);
  b.labels.resize(dataset.size());
  std::size_t d = dataset.dim();
  for (std::size_t e = 0; e < dataset.size(); ++e) {
    std::copy(dataset.inputs.data.begin() + partner[e] * d,
              dataset.inputs.data.begin() + (partner[e] + 1) * d, b.inputs.data.begin() + e * d);
    b.labels[e] = dataset.labels[partner[e]];
  }
  Batch mixed = mixup_batch(a, b, std::nullopt, split_seed(seed, "mixup-lambda"));
  out.inputs = std::move(mixed.inputs);
  out.labels = std::move(mixed.labels);
  return out;
}

void write_landscape_csv(const std::string& csv_path, const std::string& sidecar_path,
                         const LandscapeGrid& grid, std::uint64_t seed, real range) {
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw IoError("cannot open " + csv_path);
  csv << "x,y,loss\n";
  for (std::size_t i = 0; i < grid.xs.size(); ++i) {
    for (std::size_t j = 0; j < grid.ys.size(); ++j) {
      csv << fmt_real(double(grid.xs[i])) << "," << fmt_real(double(grid.ys[j])) << ","
          << fmt_real(double(grid.losses[i][j])) << "\n";
    }
  }

  nlohmann::json side{{"gap", double(grid.gap)},
                      {"seed", seed},
                      {"range", double(range)},
                      {"resolution", grid.xs.size()},
                      {"sample_id", grid.sample_id}};
  std::ofstream sc(sidecar_path, std::ios::trunc);
  if (!sc) throw IoError("cannot open " + sidecar_path);
  sc << side.dump(2) << "\n";
}

void write_transfer_csv(const std::string& path, const TransferMatrix& tm) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path);
  f << "source";
  for (const auto& t : tm.targets) f << "," << t;
  f << "\n";
  for (std::size_t s = 0; s < tm.sources.size(); ++s) {
    f << tm.sources[s];
    for (real v : tm.ra[s]) f << "," << fmt_real(double(v));
    f << "\n";
  }
}

}  // namespace last
