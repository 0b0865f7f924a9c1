// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0
//
// The wireless FL decision process. A round takes a device selection, asks
// the resource tool for an allocation and then either runs one FL round or,
// when the tool finds no feasible allocation, pays the zero-reward penalty.

#pragma once

#include "wfl/fl_sim.hpp"
#include "wfl/resource_solver.hpp"
#include "wfl/wireless.hpp"

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace wfl {

struct EnvConfig {
  FLConfig fl;
  SystemConfig sys;
  std::vector<DeviceProfile> profiles;  // data_size is overwritten by the partition
  int select_count = 4;                 // m
  BandwidthMode bandwidth_mode = BandwidthMode::EqualSplit;
  double energy_scale = 1.0;            // multiplies E_t inside the reward
  bool reuse_partition = false;
  std::uint64_t partition_seed = 0;     // used when reuse_partition is set
  int fading_block = 1;                 // rounds a channel draw is held for
  std::uint64_t channel_salt = 0;       // perturbs the channel stream only
  int quant_bits = 0;                   // 0 disables update quantization
  std::optional<DpSpec> dp;             // per-update DP noise when set
  std::shared_ptr<const Dataset> train;
  std::shared_ptr<const Dataset> test;

  int num_devices() const { return static_cast<int>(profiles.size()); }
  void validate() const;
};

/// Round reward (1 - sigma) Xi / E + sigma Xi.
double round_reward(double accuracy, double energy, double sigma, double energy_scale = 1.0);

/// Communication/computation part of the state.
struct SystemObs {
  Vector f_max, p_max, gains, last_e_cmp, last_e_com;
};

struct Observation {
  SystemObs sys;
  StatState stats;
  std::string text;
  int round = 0;
  int num_rounds = 0;
  int select_count = 0;
  double qos_time = 0;
  double bandwidth = 0;
  double sigma = 0;

  int num_devices() const { return static_cast<int>(sys.f_max.size()); }
};

struct StepResult {
  Observation next;
  double reward = 0;
  double accuracy = 0;
  double energy = 0;
  double time = 0;
  bool feasible = false;
  bool done = false;
  ResourceAllocation allocation;
};

/// Fixed three-section prompt: system role, task with constraints and output
/// format, one observation line per device.
std::string render_prompt(const Observation& obs);

/// Channel process and resource tool; shared verbatim by the real and the
/// virtual environment.
class SystemPart {
 public:
  explicit SystemPart(const EnvConfig& cfg) : cfg_(&cfg) {}
  void rebind(const EnvConfig& cfg) { cfg_ = &cfg; }

  void reset(std::uint64_t seed, std::span<const double> data_sizes);
  ResourceAllocation allocate(std::span<const int> selection) const;
  /// Records the round's energies and moves the channel forward.
  void advance(const ResourceAllocation& alloc);
  SystemObs observe() const;
  const ChannelState& channel() const { return channel_; }
  std::span<const DeviceProfile> profiles() const { return profiles_; }

 private:
  const EnvConfig* cfg_;
  std::vector<DeviceProfile> profiles_;
  ChannelState channel_;
  Rng rng_;
  int rounds_on_channel_ = 0;
  Vector last_e_cmp_, last_e_com_;
};

/// Common reset/step contract of the real and virtual environments.
class EnvironmentBase {
 public:
  virtual ~EnvironmentBase() = default;
  virtual Observation reset(std::uint64_t seed) = 0;
  virtual StepResult step(std::span<const int> selection) = 0;
  virtual const EnvConfig& config() const = 0;
  virtual std::unique_ptr<EnvironmentBase> clone() const = 0;

  int num_devices() const { return config().num_devices(); }
  int select_count() const { return config().select_count; }
  int num_rounds() const { return config().sys.num_rounds; }
};

/// Partition and initial statistics of one episode.
struct EpisodeStart {
  std::vector<Dataset> partitions;
  StatState stats;
};
EpisodeStart start_episode(const EnvConfig& cfg, std::uint64_t seed);

void check_selection_size(std::span<const int> selection, int num_devices, int select_count);

class Environment final : public EnvironmentBase {
 public:
  explicit Environment(EnvConfig cfg);
  Environment(const Environment& other);
  Environment& operator=(const Environment&) = delete;

  Observation reset(std::uint64_t seed) override;
  StepResult step(std::span<const int> selection) override;
  const EnvConfig& config() const override { return cfg_; }
  std::unique_ptr<EnvironmentBase> clone() const override;

  const ModelParams& global_model() const { return global_; }
  const std::vector<Dataset>& partitions() const { return parts_; }
  const Observation& observation() const { return obs_; }
  const SystemPart& system() const { return system_; }

 private:
  Observation make_observation() const;

  EnvConfig cfg_;
  SystemPart system_;
  std::vector<Dataset> parts_;
  ModelParams global_;
  StatState stats_;
  Observation obs_;
  Rng noise_rng_;
  int round_ = 0;
};

/// One persisted round.
struct RoundRecord {
  int round = 0;
  Selection selection;
  bool feasible = false;
  double reward = 0;
  double accuracy = 0;
  double energy = 0;
  double time = 0;
  Vector stats;       // s^m before the round
  Vector next_stats;  // s^m after the round
  Vector channel;     // gains used for the round
};

struct Trajectory {
  std::uint64_t seed = 0;
  std::string fingerprint;
  std::vector<RoundRecord> rounds;
};

RoundRecord make_record(const Observation& before, std::span<const int> selection,
                        const StepResult& res);

/// Sum of rewards over the trajectory.
double cwpem(const Trajectory& traj);

/// Newline-delimited JSON: a header line, then one line per round.
void save_trajectory(const Trajectory& traj, const std::string& path);
Trajectory load_trajectory(const std::string& path);
std::string trajectory_to_ndjson(const Trajectory& traj);

}  // namespace wfl
