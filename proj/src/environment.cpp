// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0

#include "wfl/environment.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <locale>
#include <sstream>

namespace wfl {

void EnvConfig::validate() const {
  fl.validate();
  sys.validate();
  require(!profiles.empty(), "EnvConfig: no device profiles");
  require(num_devices() == fl.num_devices, "EnvConfig: profile count differs from fl.num_devices");
  for (const auto& p : profiles) p.validate();
  require(select_count >= 1 && select_count <= num_devices(), "EnvConfig: select_count must be in [1, N]");
  require(energy_scale > 0, "EnvConfig: energy_scale must be positive");
  require(fl.local_iters == sys.local_iters, "EnvConfig: fl.local_iters differs from sys.local_iters");
  require(fading_block >= 1, "EnvConfig: fading_block must be >= 1");
  require(quant_bits >= 0, "EnvConfig: quant_bits must be >= 0");
  require(train && test, "EnvConfig: train and test datasets are required");
  train->validate();
  test->validate();
  require(train->num_classes == fl.num_classes && test->num_classes == fl.num_classes,
          "EnvConfig: dataset class count differs from fl.num_classes");
  require(train->dim() == test->dim(), "EnvConfig: train/test feature dimension mismatch");
}

double round_reward(double accuracy, double energy, double sigma, double energy_scale) {
  require(energy > 0, "round_reward: energy must be positive");
  return (1.0 - sigma) * accuracy / (energy * energy_scale) + sigma * accuracy;
}

namespace {

std::ostringstream classic_stream() {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(6);
  return os;
}

}  // namespace

std::string render_prompt(const Observation& obs) {
  const int n = obs.num_devices();
  std::ostringstream os = classic_stream();
  os << "[system]\n"
     << "You schedule clients for wireless federated learning. Each round you pick which "
        "devices train and upload; a resource tool then sets their CPU frequency, transmit "
        "power and bandwidth for minimum energy.\n"
     << "[task]\n"
     << "Round " << obs.round + 1 << " of " << obs.num_rounds << ". Select exactly "
     << obs.select_count << " distinct devices out of " << n << " (indices 0 to " << n - 1
     << ").\n"
     << "Constraints: every selected device must finish local training and upload within "
     << obs.qos_time << " s; total uplink bandwidth is " << obs.bandwidth << " Hz.\n"
     << "Goal: maximize (1 - " << obs.sigma << ") * accuracy / energy + " << obs.sigma
     << " * accuracy, summed over rounds. A selection the tool cannot serve earns 0.\n"
     << "Output format: a comma-separated list of " << obs.select_count
     << " device indices, for example 0,1,2.\n"
     << "[observation]\n"
     << "previous_accuracy=" << obs.stats.prev_accuracy << "\n";
  for (int i = 0; i < n; ++i) {
    os << "device=" << i << " global_loss=" << obs.stats.global_loss[i]
       << " local_loss=" << obs.stats.local_loss[i] << " data_size=" << obs.stats.data_size[i]
       << " gain=" << obs.sys.gains[i] << " f_max=" << obs.sys.f_max[i]
       << " p_max=" << obs.sys.p_max[i] << " last_e_cmp=" << obs.sys.last_e_cmp[i]
       << " last_e_com=" << obs.sys.last_e_com[i]
       << " selected_last=" << (obs.stats.selected[i] ? 1 : 0) << "\n";
  }
  return os.str();
}

void SystemPart::reset(std::uint64_t seed, std::span<const double> data_sizes) {
  const int n = cfg_->num_devices();
  require(static_cast<int>(data_sizes.size()) == n, "SystemPart::reset: data size count mismatch");
  profiles_.assign(cfg_->profiles.begin(), cfg_->profiles.end());
  for (int i = 0; i < n; ++i) profiles_[i].data_size = data_sizes[i];
  rng_.seed(derive_seed(derive_seed(seed, 2), cfg_->channel_salt));
  channel_ = sample_channel(rng_, n, cfg_->sys.gain_lo, cfg_->sys.gain_hi);
  rounds_on_channel_ = 0;
  last_e_cmp_ = Vector::Zero(n);
  last_e_com_ = Vector::Zero(n);
}

ResourceAllocation SystemPart::allocate(std::span<const int> selection) const {
  return wfl::allocate(selection, profiles_, channel_, cfg_->sys, cfg_->bandwidth_mode);
}

void SystemPart::advance(const ResourceAllocation& alloc) {
  last_e_cmp_.setZero();
  last_e_com_.setZero();
  if (alloc.feasible) {
    for (const auto& d : alloc.devices) {
      last_e_cmp_[d.device] = d.cost.e_cmp;
      last_e_com_[d.device] = d.cost.e_com;
    }
  }
  if (++rounds_on_channel_ >= cfg_->fading_block) {
    channel_ = sample_channel(rng_, cfg_->num_devices(), cfg_->sys.gain_lo, cfg_->sys.gain_hi);
    rounds_on_channel_ = 0;
  }
}

SystemObs SystemPart::observe() const {
  const int n = static_cast<int>(profiles_.size());
  SystemObs o;
  o.f_max.resize(n);
  o.p_max.resize(n);
  for (int i = 0; i < n; ++i) {
    o.f_max[i] = profiles_[i].f_max;
    o.p_max[i] = profiles_[i].p_max;
  }
  o.gains = channel_.gains;
  o.last_e_cmp = last_e_cmp_;
  o.last_e_com = last_e_com_;
  return o;
}

EpisodeStart start_episode(const EnvConfig& cfg, std::uint64_t seed) {
  EpisodeStart out;
  const std::uint64_t pseed = cfg.reuse_partition ? cfg.partition_seed : derive_seed(seed, 1);
  out.partitions = partition_dirichlet(*cfg.train, cfg.num_devices(), cfg.fl.alpha, pseed);
  const ModelParams zero = ModelParams::Zero(model_size(cfg.train->dim(), cfg.fl.num_classes));
  out.stats = stat_features(zero, Vector::Zero(zero.size()), {}, out.partitions, 0.0);
  return out;
}

void check_selection_size(std::span<const int> selection, int num_devices, int select_count) {
  require(!selection.empty(), "step: empty selection");
  require(static_cast<int>(selection.size()) == select_count, "step: selection size differs from m");
  std::vector<int> s(selection.begin(), selection.end());
  std::sort(s.begin(), s.end());
  require(s.front() >= 0 && s.back() < num_devices, "step: device index out of range");
  require(std::adjacent_find(s.begin(), s.end()) == s.end(), "step: repeated device in selection");
}

Environment::Environment(EnvConfig cfg) : cfg_(std::move(cfg)), system_(cfg_) { cfg_.validate(); }

Environment::Environment(const Environment& other)
    : cfg_(other.cfg_),
      system_(other.system_),
      parts_(other.parts_),
      global_(other.global_),
      stats_(other.stats_),
      obs_(other.obs_),
      noise_rng_(other.noise_rng_),
      round_(other.round_) {
  // SystemPart holds a pointer to its config; point it at our copy.
  system_.rebind(cfg_);
}

std::unique_ptr<EnvironmentBase> Environment::clone() const { return std::make_unique<Environment>(*this); }

Observation Environment::make_observation() const {
  Observation o;
  o.sys = system_.observe();
  o.stats = stats_;
  o.round = round_;
  o.num_rounds = cfg_.sys.num_rounds;
  o.select_count = cfg_.select_count;
  o.qos_time = cfg_.sys.qos_time;
  o.bandwidth = cfg_.sys.bandwidth;
  o.sigma = cfg_.sys.sigma;
  o.text = render_prompt(o);
  return o;
}

Observation Environment::reset(std::uint64_t seed) {
  EpisodeStart start = start_episode(cfg_, seed);
  parts_ = std::move(start.partitions);
  stats_ = std::move(start.stats);
  global_ = ModelParams::Zero(model_size(cfg_.train->dim(), cfg_.fl.num_classes));
  std::vector<double> sizes(parts_.size());
  for (std::size_t i = 0; i < parts_.size(); ++i) sizes[i] = static_cast<double>(parts_[i].size());
  system_.reset(seed, sizes);
  noise_rng_.seed(derive_seed(seed, 3));
  round_ = 0;
  obs_ = make_observation();
  return obs_;
}

StepResult Environment::step(std::span<const int> selection) {
  require(!parts_.empty(), "step: call reset first");
  require(round_ < cfg_.sys.num_rounds, "step: episode already finished");
  check_selection_size(selection, cfg_.num_devices(), cfg_.select_count);

  StepResult res;
  res.allocation = system_.allocate(selection);
  res.feasible = res.allocation.feasible;
  if (!res.feasible) {
    res.reward = 0;
    res.accuracy = stats_.prev_accuracy;
  } else {
    // The learner sees the selection as a set; a fixed order keeps the
    // floating-point aggregation independent of the emitted token order.
    std::vector<int> devices(selection.begin(), selection.end());
    std::sort(devices.begin(), devices.end());
    FLConfig fl = cfg_.fl;
    fl.local_iters = cfg_.sys.local_iters;
    std::vector<TrainedLocal> locals;
    std::vector<WeightedModel> weighted;
    double total_mass = 0;
    for (const auto& p : parts_) total_mass += static_cast<double>(p.size());
    for (int n : devices) {
      TrainedLocal t{n, local_train(global_, parts_[n], fl)};
      ModelParams delta = t.update.params - global_;
      if (cfg_.quant_bits > 0) delta = quantize_update(delta, cfg_.quant_bits);
      if (cfg_.dp) delta = dp_noise(delta, *cfg_.dp, noise_rng_);
      weighted.push_back({global_ + delta, static_cast<double>(parts_[n].size())});
      locals.push_back(std::move(t));
    }
    global_ = aggregate(weighted, cfg_.fl.aggregation, total_mass);
    if (!global_.allFinite()) throw NumericError("step: non-finite global model");
    const Vector global_grad = loss_and_grad(global_, *cfg_.train).grad;
    res.accuracy = evaluate(global_, *cfg_.test);
    stats_ = stat_features(global_, global_grad, locals, parts_, res.accuracy);
    res.energy = res.allocation.totals.energy;
    res.time = res.allocation.totals.time;
    res.reward = round_reward(res.accuracy, res.energy, cfg_.sys.sigma, cfg_.energy_scale);
  }
  system_.advance(res.allocation);
  ++round_;
  res.done = round_ == cfg_.sys.num_rounds;
  obs_ = make_observation();
  res.next = obs_;
  return res;
}

double cwpem(const Trajectory& traj) {
  double s = 0;
  for (const auto& r : traj.rounds) s += r.reward;
  return s;
}

namespace {

using nlohmann::json;

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::string trajectory_to_ndjson(const Trajectory& traj) {
  std::string out;
  json head = {{"type", "header"}, {"seed", traj.seed}, {"fingerprint", traj.fingerprint}};
  out += head.dump() + "\n";
  for (const auto& r : traj.rounds) {
    json line = {{"type", "round"},
                 {"round", r.round},
                 {"selection", r.selection},
                 {"feasible", r.feasible},
                 {"reward", r.reward},
                 {"accuracy", r.accuracy},
                 {"energy", r.energy},
                 {"time", r.time},
                 {"stats", to_std(r.stats)},
                 {"next_stats", to_std(r.next_stats)},
                 {"channel", to_std(r.channel)}};
    out += line.dump() + "\n";
  }
  return out;
}

void save_trajectory(const Trajectory& traj, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_trajectory: cannot open " + path);
  f << trajectory_to_ndjson(traj);
  if (!f) throw std::runtime_error("save_trajectory: write failed for " + path);
}

Trajectory load_trajectory(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_trajectory: cannot open " + path);
  Trajectory t;
  std::string line;
  bool have_header = false;
  int last_round = -1;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    const std::string type = j.at("type").get<std::string>();
    if (type == "header") {
      t.seed = j.at("seed").get<std::uint64_t>();
      t.fingerprint = j.at("fingerprint").get<std::string>();
      have_header = true;
      continue;
    }
    require(type == "round", "load_trajectory: unknown record type " + type);
    RoundRecord r;
    r.round = j.at("round").get<int>();
    require(r.round > last_round, "load_trajectory: rounds not strictly increasing");
    last_round = r.round;
    r.selection = j.at("selection").get<Selection>();
    r.feasible = j.at("feasible").get<bool>();
    r.reward = j.at("reward").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.energy = j.at("energy").get<double>();
    r.time = j.at("time").get<double>();
    r.stats = from_json(j.at("stats"));
    r.next_stats = from_json(j.at("next_stats"));
    r.channel = from_json(j.at("channel"));
    t.rounds.push_back(std::move(r));
  }
  require(have_header, "load_trajectory: missing header in " + path);
  return t;
}

RoundRecord make_record(const Observation& before, std::span<const int> selection,
                        const StepResult& res) {
  RoundRecord r;
  r.round = before.round;
  r.selection.assign(selection.begin(), selection.end());
  r.feasible = res.feasible;
  r.reward = res.reward;
  r.accuracy = res.accuracy;
  r.energy = res.energy;
  r.time = res.time;
  r.stats = before.stats.flatten();
  r.next_stats = res.next.stats.flatten();
  r.channel = before.sys.gains;
  return r;
}

}  // namespace wfl
