#include "last/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "last/config.hpp"
#include "last/rng.hpp"
#include "last/text.hpp"

namespace last {

namespace {

namespace fs = std::filesystem;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_override;
  int threads_override = 0;
  std::string checkpoint;
  long sample_override = -1;
};

RunConfig load_run_config(const CLI::App* sub, const CommonArgs& args) {
  ConfigMap cm;
  if (!args.config_path.empty()) cm = parse_config_file(args.config_path);
  for (const auto& kv : args.sets) apply_override(cm, kv);
  for (const auto& extra : sub->remaining()) {
    if (extra.rfind("--", 0) != 0 || extra.find('=') == std::string::npos) {
      throw ConfigError("unrecognized argument '" + extra + "' (overrides look like --a.b=v)");
    }
    apply_override(cm, extra.substr(2));
  }
  if (!args.out_override.empty()) cm["run.out_dir"] = args.out_override;
  if (args.threads_override > 0) cm["run.threads"] = std::to_string(args.threads_override);
  return resolve_config(cm);
}

std::pair<Dataset, Dataset> load_datasets(const RunConfig& rc) {
  if (rc.data_source == "synth") {
    Dataset train = synth_blobs(rc.data_classes, rc.data_per_class, rc.data_dim, rc.data_margin,
                                split_seed(rc.seed, "train-data"));
    Dataset test = synth_blobs(rc.data_classes, rc.data_test_per_class, rc.data_dim,
                               rc.data_margin, split_seed(rc.seed, "test-data"));
    train.split = "train";
    test.split = "test";
    return {std::move(train), std::move(test)};
  }
  if (rc.data_source == "idx") {
    if (rc.train_images.empty() || rc.test_images.empty()) {
      throw ConfigError("config: data.source=idx needs data.train_images/.../test_labels");
    }
    Dataset train = load_idx(rc.train_images, rc.train_labels);
    Dataset test = load_idx(rc.test_images, rc.test_labels);
    train.split = "train";
    test.split = "test";
    return {std::move(train), std::move(test)};
  }
  if (rc.train_bins.empty() || rc.test_bins.empty()) {
    throw ConfigError("config: data.source=cifar needs data.train_bins and data.test_bins");
  }
  Dataset train = load_cifar_binary(rc.train_bins);
  Dataset test = load_cifar_binary(rc.test_bins);
  train.split = "train";
  test.split = "test";
  return {std::move(train), std::move(test)};
}

Dataset load_test_set(const RunConfig& rc) {
  auto [train, test] = load_datasets(rc);
  (void)train;
  if (rc.eval_mixup) return mixup_dataset(test, split_seed(rc.seed, "mixup"));
  return test;
}

fs::path prepare_out_dir(const RunConfig& rc, const std::string& command) {
  fs::path dir(rc.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + rc.out_dir);
  write_manifest((dir / "manifest.txt").string(), rc, command);
  return dir;
}

void write_metrics(const fs::path& dir, const std::vector<MetricsRecord>& metrics,
                   bool record_timing) {
  std::ofstream csv(dir / "metrics.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot open metrics.csv");
  csv << "epoch,train_loss,sa,ra,robust_loss,lr,seconds\n";
  std::ofstream jsonl(dir / "metrics.jsonl", std::ios::trunc);
  if (!jsonl) throw IoError("cannot open metrics.jsonl");
  for (const auto& m : metrics) {
    double seconds = record_timing ? m.seconds : 0.0;
    csv << m.epoch << "," << fmt_real(double(m.train_loss)) << "," << fmt_real(double(m.sa)) << ","
        << fmt_real(double(m.ra)) << "," << fmt_real(double(m.robust_loss)) << ","
        << fmt_real(double(m.lr)) << "," << fmt_real(seconds) << "\n";
    nlohmann::json rec{{"epoch", m.epoch},          {"train_loss", double(m.train_loss)},
                       {"sa", double(m.sa)},        {"ra", double(m.ra)},
                       {"robust_loss", double(m.robust_loss)}, {"lr", double(m.lr)},
                       {"seconds", seconds}};
    jsonl << rec.dump() << "\n";
  }
}

NetworkSpec spec_from(const RunConfig& rc, const Dataset& train_set) {
  NetworkSpec spec;
  spec.input_dim = train_set.dim();
  spec.hidden = rc.hidden;
  spec.num_classes = train_set.num_classes;
  spec.validate();
  return spec;
}

int cmd_train(const CLI::App* sub, const CommonArgs& args) {
  RunConfig rc = load_run_config(sub, args);
  auto [train_set, test_set] = load_datasets(rc);
  NetworkSpec spec = spec_from(rc, train_set);
  fs::path dir = prepare_out_dir(rc, "train");

  Trainer trainer(spec, rc.train);
  TrainResult result = trainer.train(train_set, test_set);

  write_metrics(dir, result.metrics, rc.record_timing);
  save_checkpoint((dir / "final.ckpt").string(), result.final_checkpoint);
  save_checkpoint((dir / "best.ckpt").string(), result.best_checkpoint);

  if (result.collapse_flagged) {
    std::cout << "collapse flag: robust accuracy collapsed around epoch "
              << result.collapse_epoch << "\n";
  }
  if (result.aborted) {
    std::cerr << "training aborted: " << result.abort_reason << "\n";
    return 4;
  }
  std::cout << "trained " << result.metrics.size() << " epochs, best RA "
            << fmt_real(double(result.metrics[std::size_t(result.best_epoch)].ra))
            << "% at epoch " << result.best_epoch << "\n";
  return 0;
}

int cmd_eval(const CLI::App* sub, const CommonArgs& args) {
  RunConfig rc = load_run_config(sub, args);
  if (args.checkpoint.empty()) throw ConfigError("eval: --checkpoint is required");
  Checkpoint ckpt = load_checkpoint(args.checkpoint);
  Dataset test_set = load_test_set(rc);
  if (ckpt.spec.input_dim != test_set.dim()) {
    throw SpecMismatchError("eval: checkpoint input_dim " + std::to_string(ckpt.spec.input_dim) +
                            " vs dataset dim " + std::to_string(test_set.dim()));
  }
  fs::path dir = prepare_out_dir(rc, "eval");
  EvalOptions opts{rc.train.eval_batch_size, rc.threads};

  real sa = standard_accuracy(ckpt.spec, ckpt.params, test_set, opts);
  std::ofstream csv(dir / "eval.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot open eval.csv");
  csv << "attack,epsilon,alpha,steps,restarts,sa,ra,robust_loss\n";
  for (const auto& [name, attack] : rc.eval_attacks) {
    RobustResult rr = robust_eval(ckpt.spec, ckpt.params, test_set, attack,
                                  split_seed(rc.seed, "eval-cmd"), opts);
    std::string row = name + "," + fmt_real(double(attack.epsilon)) + "," +
                      fmt_real(double(attack.alpha)) + "," + std::to_string(attack.steps) + "," +
                      std::to_string(attack.restarts) + "," + fmt_real(double(sa)) + "," +
                      fmt_real(double(rr.accuracy)) + "," + fmt_real(double(rr.mean_loss));
    csv << row << "\n";
    std::cout << row << "\n";
  }
  return 0;
}

int cmd_landscape(const CLI::App* sub, const CommonArgs& args) {
  RunConfig rc = load_run_config(sub, args);
  if (args.checkpoint.empty()) throw ConfigError("landscape: --checkpoint is required");
  Checkpoint ckpt = load_checkpoint(args.checkpoint);
  Dataset test_set = load_test_set(rc);
  std::size_t index = args.sample_override >= 0 ? std::size_t(args.sample_override)
                                                : rc.landscape_sample;
  if (index >= test_set.size()) {
    throw ConfigError("landscape: sample index " + std::to_string(index) + " out of range (" +
                      std::to_string(test_set.size()) + " examples)");
  }
  fs::path dir = prepare_out_dir(rc, "landscape");

  std::size_t d = test_set.dim();
  Tensor sample({d}, std::vector<real>(test_set.inputs.data.begin() + index * d,
                                       test_set.inputs.data.begin() + (index + 1) * d));
  LandscapeGrid grid = landscape_grid(ckpt.spec, ckpt.params, sample, test_set.labels[index],
                                      rc.landscape_range, rc.landscape_resolution,
                                      split_seed(rc.seed, "landscape"),
                                      test_set.split + ":" + std::to_string(index));
  write_landscape_csv((dir / "landscape.csv").string(), (dir / "landscape.json").string(), grid,
                      rc.seed, rc.landscape_range);
  std::cout << "landscape gap " << fmt_real(double(grid.gap)) << " over "
            << grid.xs.size() << "x" << grid.ys.size() << " grid\n";
  return 0;
}

int cmd_transfer(const CLI::App* sub, const CommonArgs& args) {
  RunConfig rc = load_run_config(sub, args);
  if (rc.transfer_models.empty()) {
    throw ConfigError("transfer: transfer.models must list at least one checkpoint");
  }
  Dataset test_set = load_test_set(rc);
  std::vector<Model> models;
  for (const auto& path : rc.transfer_models) {
    Checkpoint c = load_checkpoint(path);
    models.push_back({fs::path(path).stem().string(), c.spec, std::move(c.params)});
  }
  std::vector<Model> extra;
  if (!rc.transfer_standard.empty()) {
    Checkpoint c = load_checkpoint(rc.transfer_standard);
    extra.push_back({"standard", c.spec, std::move(c.params)});
  }
  fs::path dir = prepare_out_dir(rc, "transfer");
  EvalOptions opts{rc.train.eval_batch_size, rc.threads};
  TransferMatrix tm = transfer_matrix(models, test_set, rc.transfer_attack.second,
                                      split_seed(rc.seed, "transfer"), opts, extra);
  write_transfer_csv((dir / "transfer.csv").string(), tm);
  std::cout << "transfer matrix " << tm.sources.size() << "x" << tm.targets.size()
            << " written\n";
  return 0;
}

int cmd_gradmap(const CLI::App* sub, const CommonArgs& args) {
  RunConfig rc = load_run_config(sub, args);
  if (args.checkpoint.empty()) throw ConfigError("gradmap: --checkpoint is required");
  Checkpoint ckpt = load_checkpoint(args.checkpoint);
  Dataset test_set = load_test_set(rc);
  std::size_t index =
      args.sample_override >= 0 ? std::size_t(args.sample_override) : rc.gradmap_sample;
  if (index >= test_set.size()) {
    throw ConfigError("gradmap: sample index " + std::to_string(index) + " out of range (" +
                      std::to_string(test_set.size()) + " examples)");
  }
  fs::path dir = prepare_out_dir(rc, "gradmap");

  std::size_t d = test_set.dim();
  Tensor sample({d}, std::vector<real>(test_set.inputs.data.begin() + index * d,
                                       test_set.inputs.data.begin() + (index + 1) * d));
  Tensor map = input_gradient_map(ckpt.spec, ckpt.params, sample, test_set.labels[index],
                                  test_set.layout);
  std::size_t channels = map.shape[0], h = map.shape[1], w = map.shape[2];
  for (std::size_t c = 0; c < channels; ++c) {
    std::ofstream f(dir / ("gradmap_c" + std::to_string(c) + ".csv"), std::ios::trunc);
    if (!f) throw IoError("cannot open gradmap channel file");
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t col = 0; col < w; ++col) {
        if (col) f << ",";
        f << fmt_real(double(map.data[c * h * w + r * w + col]));
      }
      f << "\n";
    }
  }
  nlohmann::json side{{"sample", index},
                      {"label", test_set.labels[index]},
                      {"channels", channels},
                      {"height", h},
                      {"width", w}};
  std::ofstream sc(dir / "gradmap.json", std::ios::trunc);
  sc << side.dump(2) << "\n";
  std::cout << channels << " gradient map channel(s) written\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"proxy-guided adversarial training toolkit"};
  app.require_subcommand(1);

  CommonArgs args;
  auto add_common = [&](CLI::App* sub, bool with_checkpoint, bool with_sample) {
    sub->add_option("-c,--config", args.config_path, "config file (key = value with [sections])");
    sub->add_option("--set", args.sets, "override, e.g. --set train.lr=0.05")->take_all();
    sub->add_option("-o,--out", args.out_override, "output directory");
    sub->add_option("--threads", args.threads_override, "parallel evaluation threads");
    if (with_checkpoint) sub->add_option("--checkpoint", args.checkpoint, "checkpoint path");
    if (with_sample) sub->add_option("--sample", args.sample_override, "test sample index");
    sub->allow_extras();
  };

  CLI::App* train = app.add_subcommand("train", "run adversarial training");
  add_common(train, false, false);
  CLI::App* eval = app.add_subcommand("eval", "standard/robust accuracy of a checkpoint");
  add_common(eval, true, false);
  CLI::App* landscape = app.add_subcommand("landscape", "attack-loss surface grid");
  add_common(landscape, true, true);
  CLI::App* transfer = app.add_subcommand("transfer", "cross-model transfer attack matrix");
  add_common(transfer, false, false);
  CLI::App* gradmap = app.add_subcommand("gradmap", "normalized input-gradient heat map data");
  add_common(gradmap, true, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) return cmd_train(train, args);
    if (eval->parsed()) return cmd_eval(eval, args);
    if (landscape->parsed()) return cmd_landscape(landscape, args);
    if (transfer->parsed()) return cmd_transfer(transfer, args);
    if (gradmap->parsed()) return cmd_gradmap(gradmap, args);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace last
