#include "last/config.hpp"

#include <fstream>

#include "last/text.hpp"

namespace last {

namespace {

struct KeyInfo {
  const char* key;
  const char* def;
};

// The registry: one entry per accepted key with its default.
const std::vector<KeyInfo>& registry() {
  static const std::vector<KeyInfo> keys = {
      {"run.seed", "1"},
      {"run.out_dir", "out"},
      {"run.threads", "1"},
      {"run.record_timing", "false"},

      {"data.source", "synth"},
      {"data.classes", "10"},
      {"data.per_class", "300"},
      {"data.test_per_class", "100"},
      {"data.dim", "784"},
      {"data.margin", "0.5"},
      {"data.train_images", ""},
      {"data.train_labels", ""},
      {"data.test_images", ""},
      {"data.test_labels", ""},
      {"data.train_bins", ""},
      {"data.test_bins", ""},

      {"model.hidden", "256"},

      {"train.mode", "SAT"},
      {"train.epochs", "10"},
      {"train.lr", "0.1"},
      {"train.gamma", "0.8"},
      {"train.batch_size", "128"},
      {"train.momentum", "0.9"},
      {"train.weight_decay", "0.0005"},
      {"train.scheduler", "constant"},
      {"train.max_lr", "0"},
      {"train.milestones", "100,150"},
      {"train.decay_factor", "0.1"},
      {"train.swa_start_epoch", "0"},
      {"train.proxy_bare_step", "false"},
      {"train.eval_attack", ""},

      {"attack.epsilon", "8/255"},
      {"attack.alpha", ""},
      {"attack.steps", "1"},
      {"attack.restarts", "1"},
      {"attack.init", "uniform"},
      {"attack.pixel_box", "0,1"},

      {"sd.enabled", "false"},
      {"sd.mu", "0.95"},
      {"sd.tau", "6.0"},
      {"sd.detach_clean", "true"},
      {"sd.tau_squared_scale", "false"},

      {"eval.attacks", "pgd10@8/255,pgd50@8/255"},
      {"eval.batch_size", "256"},
      {"eval.mixup", "false"},

      {"landscape.range", "0.25"},
      {"landscape.resolution", "21"},
      {"landscape.sample", "0"},

      {"gradmap.sample", "0"},

      {"transfer.models", ""},
      {"transfer.standard", ""},
      {"transfer.attack", "pgd10@8/255"},
  };
  return keys;
}

bool known_key(const std::string& key) {
  for (const auto& k : registry())
    if (key == k.key) return true;
  return false;
}

long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    long n = std::stol(v, &used);
    if (used != v.size()) throw ValueError("");
    return n;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " = '" + v + "' is not an integer");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  long n = to_long(key, v);
  if (n < 0) throw ConfigError("config: " + key + " must be >= 0");
  return std::uint64_t(n);
}

real to_real(const std::string& key, const std::string& v) {
  try {
    return real(parse_real(v));
  } catch (const ValueError&) {
    throw ConfigError("config: " + key + " = '" + v + "' is not a number");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  try {
    return parse_bool(v);
  } catch (const ValueError&) {
    throw ConfigError("config: " + key + " = '" + v + "' is not a boolean");
  }
}

}  // namespace

ConfigMap parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("config: cannot open " + path);
  ConfigMap out;
  std::string line, section;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) {
        throw ConfigError("config: empty section at " + path + ":" + std::to_string(lineno));
      }
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: expected key = value at " + path + ":" + std::to_string(lineno));
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config: empty key at " + path + ":" + std::to_string(lineno));
    }
    std::string full = section.empty() ? key : section + "." + key;
    out[full] = value;
  }
  return out;
}

void apply_override(ConfigMap& cfg, const std::string& kv) {
  auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + kv + "' is not key=value");
  }
  cfg[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
}

std::pair<std::string, AttackConfig> parse_attack_spec(const std::string& raw) {
  std::string s = trim(raw);
  if (s.rfind("pgd", 0) != 0) throw ConfigError("attack spec '" + raw + "' must start with pgd");
  auto at = s.find('@');
  if (at == std::string::npos) throw ConfigError("attack spec '" + raw + "' missing @epsilon");
  std::string head = s.substr(3, at - 3);
  std::string tail = s.substr(at + 1);

  AttackConfig cfg;
  auto x = head.find('x');
  try {
    if (x == std::string::npos) {
      cfg.steps = int(std::stol(head));
      cfg.restarts = cfg.steps == 50 ? 10 : 1;
    } else {
      cfg.steps = int(std::stol(head.substr(0, x)));
      cfg.restarts = int(std::stol(head.substr(x + 1)));
    }
  } catch (const std::exception&) {
    throw ConfigError("attack spec '" + raw + "': bad step/restart counts");
  }

  auto colon = tail.find(':');
  std::string eps_s = colon == std::string::npos ? tail : tail.substr(0, colon);
  try {
    cfg.epsilon = real(parse_real(eps_s));
    if (colon != std::string::npos) {
      cfg.alpha = real(parse_real(tail.substr(colon + 1)));
    } else {
      cfg.alpha = cfg.epsilon > real(0) ? cfg.epsilon / real(4) : real(1);
    }
  } catch (const ValueError&) {
    throw ConfigError("attack spec '" + raw + "': bad epsilon/alpha");
  }
  cfg.init = AttackConfig::Init::kUniform;
  cfg.validate();
  return {s.substr(0, at), cfg};
}

RunConfig resolve_config(const ConfigMap& values) {
  for (const auto& [key, value] : values) {
    if (!known_key(key)) throw ConfigError("config: unknown key '" + key + "'");
    (void)value;
  }

  std::map<std::string, std::string> resolved;
  for (const auto& k : registry()) {
    auto it = values.find(k.key);
    resolved[k.key] = it == values.end() ? k.def : it->second;
  }
  auto get = [&](const char* key) -> const std::string& { return resolved.at(key); };

  RunConfig rc;
  rc.seed = to_u64("run.seed", get("run.seed"));
  rc.out_dir = get("run.out_dir");
  rc.threads = int(to_long("run.threads", get("run.threads")));
  if (rc.threads < 1) throw ConfigError("config: run.threads must be >= 1");
  rc.record_timing = to_bool("run.record_timing", get("run.record_timing"));

  rc.data_source = get("data.source");
  if (rc.data_source != "synth" && rc.data_source != "idx" && rc.data_source != "cifar") {
    throw ConfigError("config: data.source must be synth, idx or cifar");
  }
  rc.data_classes = to_u64("data.classes", get("data.classes"));
  rc.data_per_class = to_u64("data.per_class", get("data.per_class"));
  rc.data_test_per_class = to_u64("data.test_per_class", get("data.test_per_class"));
  rc.data_dim = to_u64("data.dim", get("data.dim"));
  rc.data_margin = to_real("data.margin", get("data.margin"));
  rc.train_images = get("data.train_images");
  rc.train_labels = get("data.train_labels");
  rc.test_images = get("data.test_images");
  rc.test_labels = get("data.test_labels");
  rc.train_bins = split_list(get("data.train_bins"), ',');
  rc.test_bins = split_list(get("data.test_bins"), ',');

  rc.hidden.clear();
  for (const auto& w : split_list(get("model.hidden"), ',')) {
    rc.hidden.push_back(to_u64("model.hidden", w));
  }

  TrainConfig& t = rc.train;
  try {
    t.mode = parse_mode(get("train.mode"));
  } catch (const ValueError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  t.epochs = int(to_long("train.epochs", get("train.epochs")));
  t.lr = to_real("train.lr", get("train.lr"));
  t.gamma = to_real("train.gamma", get("train.gamma"));
  t.batch_size = to_u64("train.batch_size", get("train.batch_size"));
  t.optimizer.momentum = to_real("train.momentum", get("train.momentum"));
  t.optimizer.weight_decay = to_real("train.weight_decay", get("train.weight_decay"));
  const std::string& sched = get("train.scheduler");
  if (sched == "constant") t.scheduler.kind = SchedulerConfig::Kind::kConstant;
  else if (sched == "cyclic") t.scheduler.kind = SchedulerConfig::Kind::kCyclic;
  else if (sched == "multistep") t.scheduler.kind = SchedulerConfig::Kind::kMultistep;
  else throw ConfigError("config: train.scheduler must be constant, cyclic or multistep");
  t.scheduler.max_lr = to_real("train.max_lr", get("train.max_lr"));
  t.scheduler.milestones.clear();
  for (const auto& m : split_list(get("train.milestones"), ',')) {
    t.scheduler.milestones.push_back(int(to_long("train.milestones", m)));
  }
  t.scheduler.factor = to_real("train.decay_factor", get("train.decay_factor"));
  t.swa_start_epoch = int(to_long("train.swa_start_epoch", get("train.swa_start_epoch")));
  t.proxy_bare_step = to_bool("train.proxy_bare_step", get("train.proxy_bare_step"));
  t.seed = rc.seed;
  t.eval_batch_size = to_u64("eval.batch_size", get("eval.batch_size"));
  t.eval_threads = rc.threads;

  AttackConfig& a = t.attack;
  a.epsilon = to_real("attack.epsilon", get("attack.epsilon"));
  const std::string& alpha_s = get("attack.alpha");
  if (alpha_s.empty()) {
    // Fast-AT convention for single-step, eps/4 otherwise
    int steps = int(to_long("attack.steps", get("attack.steps")));
    real base = a.epsilon > real(0) ? a.epsilon : real(0.8);
    a.alpha = steps == 1 ? real(1.25) * base : base / real(4);
  } else {
    a.alpha = to_real("attack.alpha", alpha_s);
  }
  a.steps = int(to_long("attack.steps", get("attack.steps")));
  a.restarts = int(to_long("attack.restarts", get("attack.restarts")));
  const std::string& init_s = get("attack.init");
  if (init_s == "zero") a.init = AttackConfig::Init::kZero;
  else if (init_s == "uniform") a.init = AttackConfig::Init::kUniform;
  else throw ConfigError("config: attack.init must be zero or uniform");
  const std::string& box_s = get("attack.pixel_box");
  if (box_s == "none") {
    a.pixel_box.reset();
  } else {
    auto parts = split_list(box_s, ',');
    if (parts.size() != 2) {
      throw ConfigError("config: attack.pixel_box must be 'lo,hi' or 'none'");
    }
    a.pixel_box = {to_real("attack.pixel_box", parts[0]), to_real("attack.pixel_box", parts[1])};
  }

  if (to_bool("sd.enabled", get("sd.enabled"))) {
    SDConfig sd;
    sd.mu = to_real("sd.mu", get("sd.mu"));
    sd.tau = to_real("sd.tau", get("sd.tau"));
    sd.detach_clean = to_bool("sd.detach_clean", get("sd.detach_clean"));
    sd.tau_squared_scale = to_bool("sd.tau_squared_scale", get("sd.tau_squared_scale"));
    t.sd = sd;
  }

  const std::string& tea = get("train.eval_attack");
  if (tea.empty()) {
    t.eval_attack = pgd10(a.epsilon);
    if (a.epsilon == real(0)) t.eval_attack.alpha = real(1);
    t.eval_attack.pixel_box = a.pixel_box;
  } else {
    try {
      t.eval_attack = parse_attack_spec(tea).second;
      t.eval_attack.pixel_box = a.pixel_box;
    } catch (const ConfigError& e) {
      throw ConfigError("config: train.eval_attack: " + std::string(e.what()));
    }
  }

  for (const auto& spec : split_list(get("eval.attacks"), ',')) {
    auto parsed = parse_attack_spec(spec);
    parsed.second.pixel_box = a.pixel_box;
    rc.eval_attacks.push_back(std::move(parsed));
  }
  rc.eval_mixup = to_bool("eval.mixup", get("eval.mixup"));

  rc.landscape_range = to_real("landscape.range", get("landscape.range"));
  rc.landscape_resolution = to_u64("landscape.resolution", get("landscape.resolution"));
  rc.landscape_sample = to_u64("landscape.sample", get("landscape.sample"));
  rc.gradmap_sample = to_u64("gradmap.sample", get("gradmap.sample"));

  rc.transfer_models = split_list(get("transfer.models"), ',');
  rc.transfer_standard = get("transfer.standard");
  rc.transfer_attack = parse_attack_spec(get("transfer.attack"));
  rc.transfer_attack.second.pixel_box = a.pixel_box;

  rc.resolved = std::move(resolved);
  return rc;
}

void write_manifest(const std::string& path, const RunConfig& cfg, const std::string& command) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("manifest: cannot open " + path);
  f << "command = " << command << "\n";
  f << "format.checkpoint = 1\n";
  f << "format.metrics = epoch,train_loss,sa,ra,robust_loss,lr,seconds\n";
  for (const auto& [key, value] : cfg.resolved) {
    f << key << " = " << value << "\n";
  }
}

}  // namespace last
