// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: presets, a sectioned key-value file format and a
// content fingerprint.

#pragma once

#include "wfl/environment.hpp"
#include "wfl/grpo.hpp"
#include "wfl/virtual_env.hpp"

#include <string>
#include <vector>

namespace wfl {

struct DataConfig {
  int dim = 2;
  int train_samples = 2000;
  int test_samples = 1000;
  double separation = 2.5;
  double noise = 1.0;
  std::uint64_t seed = 7;
  std::string train_file;  // optional; overrides the synthetic blobs
  std::string test_file;
};

/// Ranges the device capabilities are drawn from. f_max is uniform, p_max
/// log-uniform.
struct ProfileRanges {
  double f_lo = 0.5e9, f_hi = 4e9;
  double p_lo = 1e-3, p_hi = 1.0;
  double model_bits = 1e6;
  double cycles_per_sample = 7e5;
  double kappa = 1e-28;
  std::uint64_t seed = 11;
};

enum class Algorithm { Grpo, Ppo };

struct PolicyConfig {
  std::vector<int> hidden{128, 128};
  TrainConfig train;
  Algorithm algorithm = Algorithm::Grpo;
  int normalizer_episodes = 32;
};

struct EvalConfig {
  int trials = 10;
  double greedy_epsilon = 0.1;
};

struct ExperimentConfig {
  std::string preset = "desk-small";
  FLConfig fl;
  DataConfig data;
  SystemConfig sys;
  ProfileRanges devices;
  int select_count = 4;
  BandwidthMode bandwidth_mode = BandwidthMode::EqualSplit;
  double energy_scale = 1.0;
  bool reuse_partition = true;
  std::uint64_t partition_seed = 3;
  int fading_block = 1;
  int quant_bits = 0;
  double dp_epsilon = 0;  // 0 disables DP
  double dp_delta = 1e-5;
  double dp_clip = 1.0;
  WorldModelConfig world;
  int trajectories = 100;  // T_m
  PolicyConfig policy;
  EvalConfig eval;
  std::uint64_t seed = 1;
  std::string output_dir = "out";

  void validate() const;

  /// Canonical text form; every key, fixed order, shortest round-trip numbers.
  std::string to_ini() const;

  /// 16 hex digits of FNV-1a over to_ini() without seed and output_dir.
  std::string fingerprint() const;
};

/// "paper-default", "scenario-2" or "desk-small".
ExperimentConfig make_preset(const std::string& name);
std::vector<std::string> preset_names();

/// Reads `[run] preset` first, then applies every other key over that preset.
/// Unknown sections or keys and malformed values throw InvalidArgument.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Device capabilities drawn from `devices` with `devices.seed`.
std::vector<DeviceProfile> sample_profiles(const ExperimentConfig& cfg);

/// Datasets plus profiles, ready for Environment / VirtualEnvironment.
EnvConfig make_env_config(const ExperimentConfig& cfg);

}  // namespace wfl
