// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0

#include "wfl/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace wfl {

namespace {

std::string fmt(double x) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const char* end = s.data() + s.size();
  auto r = std::from_chars(s.data(), end, v);
  require(r.ec == std::errc() && r.ptr == end, "config: malformed value for " + key + ": '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw InvalidArgument("config: expected true/false for " + key + ": '" + s + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    const auto b = tok.find_first_not_of(' '), e = tok.find_last_not_of(' ');
    require(b != std::string::npos, "config: empty list element in " + key);
    out.push_back(parse_number<int>(key, tok.substr(b, e - b + 1)));
  }
  return out;
}

std::string int_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::string section, key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
  bool hashed = true;
};

template <typename T>
Field num(std::string sec, std::string key, T& ref) {
  const std::string name = sec + "." + key;
  Field f{sec, key, nullptr, nullptr};
  if constexpr (std::is_floating_point_v<T>) {
    f.get = [&ref] { return fmt(ref); };
  } else {
    f.get = [&ref] { return std::to_string(ref); };
  }
  f.set = [&ref, name](const std::string& s) { ref = parse_number<T>(name, s); };
  return f;
}

Field flag(std::string sec, std::string key, bool& ref) {
  const std::string name = sec + "." + key;
  return {sec, key, [&ref] { return std::string(ref ? "true" : "false"); },
          [&ref, name](const std::string& s) { ref = parse_bool(name, s); }};
}

Field text(std::string sec, std::string key, std::string& ref, bool hashed = true) {
  return {sec, key, [&ref] { return ref; }, [&ref](const std::string& s) { ref = s; }, hashed};
}

Field list(std::string sec, std::string key, std::vector<int>& ref) {
  const std::string name = sec + "." + key;
  return {sec, key, [&ref] { return int_list(ref); },
          [&ref, name](const std::string& s) { ref = parse_int_list(name, s); }};
}

template <typename E>
Field choice(std::string sec, std::string key, E& ref, std::vector<std::pair<E, std::string>> names) {
  const std::string name = sec + "." + key;
  return {sec, key,
          [&ref, names] {
            for (const auto& [v, n] : names) {
              if (v == ref) return n;
            }
            return std::string("?");
          },
          [&ref, names, name](const std::string& s) {
            for (const auto& [v, n] : names) {
              if (n == s) {
                ref = v;
                return;
              }
            }
            throw InvalidArgument("config: unknown value for " + name + ": '" + s + "'");
          }};
}

std::vector<Field> fields(ExperimentConfig& c) {
  return {
      text("run", "preset", c.preset),
      num("run", "seed", c.seed),
      text("run", "output_dir", c.output_dir, false),

      num("fl", "num_devices", c.fl.num_devices),
      num("fl", "local_iters", c.fl.local_iters),
      num("fl", "learning_rate", c.fl.learning_rate),
      num("fl", "alpha", c.fl.alpha),
      num("fl", "num_classes", c.fl.num_classes),
      choice("fl", "aggregation", c.fl.aggregation,
             {{AggregationMode::ParticipatingMass, "participating"}, {AggregationMode::LiteralGlobalMass, "literal"}}),

      num("data", "dim", c.data.dim),
      num("data", "train_samples", c.data.train_samples),
      num("data", "test_samples", c.data.test_samples),
      num("data", "separation", c.data.separation),
      num("data", "noise", c.data.noise),
      num("data", "seed", c.data.seed),
      text("data", "train_file", c.data.train_file),
      text("data", "test_file", c.data.test_file),

      num("system", "bandwidth", c.sys.bandwidth),
      num("system", "noise_psd", c.sys.noise_psd),
      num("system", "qos_time", c.sys.qos_time),
      num("system", "num_rounds", c.sys.num_rounds),
      num("system", "sigma", c.sys.sigma),
      num("system", "gain_lo", c.sys.gain_lo),
      num("system", "gain_hi", c.sys.gain_hi),

      num("devices", "f_lo", c.devices.f_lo),
      num("devices", "f_hi", c.devices.f_hi),
      num("devices", "p_lo", c.devices.p_lo),
      num("devices", "p_hi", c.devices.p_hi),
      num("devices", "model_bits", c.devices.model_bits),
      num("devices", "cycles_per_sample", c.devices.cycles_per_sample),
      num("devices", "kappa", c.devices.kappa),
      num("devices", "seed", c.devices.seed),

      num("env", "select_count", c.select_count),
      choice("env", "bandwidth_mode", c.bandwidth_mode,
             {{BandwidthMode::EqualSplit, "equal"}, {BandwidthMode::Optimized, "optimized"}}),
      num("env", "energy_scale", c.energy_scale),
      flag("env", "reuse_partition", c.reuse_partition),
      num("env", "partition_seed", c.partition_seed),
      num("env", "fading_block", c.fading_block),
      num("env", "quant_bits", c.quant_bits),
      num("env", "dp_epsilon", c.dp_epsilon),
      num("env", "dp_delta", c.dp_delta),
      num("env", "dp_clip", c.dp_clip),

      num("world", "trajectories", c.trajectories),
      num("world", "window", c.world.window),
      list("world", "hidden", c.world.hidden),
      num("world", "epochs", c.world.epochs),
      num("world", "learning_rate", c.world.learning_rate),
      num("world", "batch", c.world.batch),
      num("world", "holdout", c.world.holdout),

      choice("policy", "algorithm", c.policy.algorithm, {{Algorithm::Grpo, "grpo"}, {Algorithm::Ppo, "ppo"}}),
      list("policy", "hidden", c.policy.hidden),
      num("policy", "batch", c.policy.train.batch),
      num("policy", "iterations", c.policy.train.iterations),
      num("policy", "clip", c.policy.train.clip),
      num("policy", "epochs", c.policy.train.epochs),
      num("policy", "learning_rate", c.policy.train.learning_rate),
      num("policy", "gamma", c.policy.train.gamma),
      num("policy", "std_floor", c.policy.train.std_floor),
      num("policy", "normalizer_episodes", c.policy.normalizer_episodes),

      num("eval", "trials", c.eval.trials),
      num("eval", "greedy_epsilon", c.eval.greedy_epsilon),
  };
}

std::string render(const ExperimentConfig& cfg, bool hashed_only) {
  ExperimentConfig copy = cfg;
  std::string out, section;
  for (const auto& f : fields(copy)) {
    if (hashed_only && (!f.hashed || (f.section == "run" && f.key == "seed"))) continue;
    if (f.section != section) {
      out += (section.empty() ? "" : "\n") + ("[" + f.section + "]\n");
      section = f.section;
    }
    out += f.key + " = " + f.get() + "\n";
  }
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  fl.validate();
  sys.validate();
  require(sys.local_iters == fl.local_iters, "config: system and FL local iterations differ");
  require(data.dim >= 1 && data.train_samples >= fl.num_devices && data.test_samples >= 1,
          "config: data sizes must be positive and cover every device");
  require(devices.f_lo > 0 && devices.f_lo <= devices.f_hi, "config: invalid f_max range");
  require(devices.p_lo > 0 && devices.p_lo <= devices.p_hi, "config: invalid p_max range");
  require(devices.model_bits > 0 && devices.cycles_per_sample > 0 && devices.kappa > 0,
          "config: device constants must be positive");
  require(select_count >= 1 && select_count <= fl.num_devices, "config: select_count must be in [1, N]");
  require(energy_scale > 0, "config: energy_scale must be positive");
  require(fading_block >= 1, "config: fading_block must be >= 1");
  require(quant_bits >= 0 && quant_bits <= 52, "config: quant_bits must be in [0, 52]");
  require(dp_epsilon >= 0, "config: dp_epsilon must be >= 0");
  require(dp_epsilon == 0 || (dp_delta > 0 && dp_delta < 1 && dp_clip > 0), "config: invalid DP parameters");
  require(world.window >= 1 && world.epochs >= 1 && world.batch >= 1 && world.learning_rate > 0,
          "config: invalid world-model settings");
  require(world.holdout > 0 && world.holdout < 1, "config: world holdout must be in (0, 1)");
  require(trajectories >= 2, "config: need at least two trajectories");
  require(!world.hidden.empty() && !policy.hidden.empty(), "config: hidden layer lists must be non-empty");
  for (int h : world.hidden) require(h >= 1, "config: hidden sizes must be positive");
  for (int h : policy.hidden) require(h >= 1, "config: hidden sizes must be positive");
  policy.train.validate();
  require(policy.normalizer_episodes >= 1, "config: normalizer_episodes must be >= 1");
  require(eval.trials >= 2, "config: eval.trials must be >= 2");
  require(eval.greedy_epsilon >= 0 && eval.greedy_epsilon <= 1, "config: greedy_epsilon must be in [0, 1]");
}

std::string ExperimentConfig::to_ini() const { return render(*this, false); }

std::string ExperimentConfig::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : render(*this, true)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::string> preset_names() { return {"desk-small", "scenario-2", "paper-default"}; }

ExperimentConfig make_preset(const std::string& name) {
  ExperimentConfig c;
  c.preset = name;
  c.fl.num_devices = 8;
  c.fl.local_iters = 5;
  c.fl.learning_rate = 0.5;
  c.fl.alpha = 0.2;
  c.fl.num_classes = 4;
  c.sys.local_iters = 5;
  c.sys.num_rounds = 20;
  // Tight enough that about 70% of uniformly random selections are feasible.
  c.sys.qos_time = 1.517;
  if (name == "desk-small") return c;
  if (name == "scenario-2") {
    // Same task and data; every device's capabilities are redrawn.
    c.devices.seed = 12;
    return c;
  }
  if (name == "paper-default") {
    c.fl.num_devices = 20;
    c.sys.num_rounds = 100;
    c.sys.qos_time = 15.0;
    c.select_count = 5;
    c.devices.model_bits = 53.21e6;
    c.fl.num_classes = 10;
    c.data.dim = 16;
    c.data.train_samples = 10000;
    c.data.test_samples = 2000;
    return c;
  }
  throw InvalidArgument("unknown preset '" + name + "'");
}

ExperimentConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  std::string preset = "desk-small";
  if (auto run = tree.get_child_optional("run")) {
    if (auto p = run->get_optional<std::string>("preset")) preset = *p;
  }
  ExperimentConfig cfg = make_preset(preset);
  auto fs = fields(cfg);
  std::set<std::string> sections;
  for (const auto& f : fs) sections.insert(f.section);
  for (const auto& [sec, body] : tree) {
    require(body.data().empty(), "config: key outside of a section: " + sec);
    require(sections.count(sec), "config: unknown section [" + sec + "]");
    for (const auto& [key, value] : body) {
      auto it = std::find_if(fs.begin(), fs.end(), [&](const Field& f) { return f.section == sec && f.key == key; });
      require(it != fs.end(), "config: unknown key " + sec + "." + key);
      it->set(value.data());
    }
  }
  cfg.sys.local_iters = cfg.fl.local_iters;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::vector<DeviceProfile> sample_profiles(const ExperimentConfig& cfg) {
  Rng rng(cfg.devices.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<DeviceProfile> out(cfg.fl.num_devices);
  for (auto& p : out) {
    p.f_max = cfg.devices.f_lo + (cfg.devices.f_hi - cfg.devices.f_lo) * u(rng);
    p.p_max = std::exp(std::log(cfg.devices.p_lo) + (std::log(cfg.devices.p_hi) - std::log(cfg.devices.p_lo)) * u(rng));
    p.model_bits = cfg.devices.model_bits;
    p.cycles_per_sample = cfg.devices.cycles_per_sample;
    p.kappa = cfg.devices.kappa;
  }
  return out;
}

EnvConfig make_env_config(const ExperimentConfig& cfg) {
  cfg.validate();
  EnvConfig env;
  env.fl = cfg.fl;
  env.sys = cfg.sys;
  env.profiles = sample_profiles(cfg);
  env.select_count = cfg.select_count;
  env.bandwidth_mode = cfg.bandwidth_mode;
  env.energy_scale = cfg.energy_scale;
  env.reuse_partition = cfg.reuse_partition;
  env.partition_seed = cfg.partition_seed;
  env.fading_block = cfg.fading_block;
  env.quant_bits = cfg.quant_bits;
  if (cfg.quant_bits > 0 && cfg.quant_bits < 32) {
    // A b-bit update uploads b/32 of the full-precision payload.
    for (auto& p : env.profiles) p.model_bits *= cfg.quant_bits / 32.0;
  }
  if (cfg.dp_epsilon > 0) env.dp = DpSpec{cfg.dp_clip, cfg.dp_epsilon, cfg.dp_delta, cfg.sys.num_rounds};
  if (!cfg.data.train_file.empty()) {
    env.train = std::make_shared<Dataset>(load_dataset(cfg.data.train_file));
  } else {
    env.train = std::make_shared<Dataset>(make_blobs(cfg.data.train_samples, cfg.data.dim, cfg.fl.num_classes,
                                                     cfg.data.separation, cfg.data.noise, cfg.data.seed));
  }
  if (!cfg.data.test_file.empty()) {
    env.test = std::make_shared<Dataset>(load_dataset(cfg.data.test_file));
  } else {
    env.test = std::make_shared<Dataset>(make_blobs(cfg.data.test_samples, cfg.data.dim, cfg.fl.num_classes,
                                                    cfg.data.separation, cfg.data.noise,
                                                    derive_seed(cfg.data.seed, 1)));
  }
  require(env.train->num_classes == cfg.fl.num_classes && env.test->num_classes == cfg.fl.num_classes,
          "config: dataset class count differs from fl.num_classes");
  env.validate();
  return env;
}

}  // namespace wfl
