#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "last/trainer.hpp"

namespace last {

// Raw "section.key" -> value pairs from a config file plus overrides.
// Sections come from [section] lines; '#' starts a comment.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_file(const std::string& path);
void apply_override(ConfigMap& cfg, const std::string& key_equals_value);

// "pgd<K>[x<R>]@<eps>[:<alpha>]"; K=50 defaults to 10 restarts, otherwise 1.
// Omitted alpha means eps/4 (or 1 when eps is 0, where the step size is moot).
std::pair<std::string, AttackConfig> parse_attack_spec(const std::string& spec);

// Fully resolved run configuration. Every knob has a documented default;
// unknown keys are hard errors.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  int threads = 1;
  bool record_timing = false;

  std::string data_source = "synth";  // synth | idx | cifar
  std::size_t data_classes = 10;
  std::size_t data_per_class = 300;
  std::size_t data_test_per_class = 100;
  std::size_t data_dim = 784;
  real data_margin = 0.5;
  std::string train_images, train_labels, test_images, test_labels;
  std::vector<std::string> train_bins, test_bins;

  std::vector<std::size_t> hidden = {256};

  TrainConfig train;

  std::vector<std::pair<std::string, AttackConfig>> eval_attacks;
  bool eval_mixup = false;

  real landscape_range = 0.25;
  std::size_t landscape_resolution = 21;
  std::size_t landscape_sample = 0;
  std::size_t gradmap_sample = 0;

  std::vector<std::string> transfer_models;
  std::string transfer_standard;
  std::pair<std::string, AttackConfig> transfer_attack;

  // every registry key with its final value, for the manifest
  std::map<std::string, std::string> resolved;
};

RunConfig resolve_config(const ConfigMap& values);

void write_manifest(const std::string& path, const RunConfig& cfg, const std::string& command);

}  // namespace last
