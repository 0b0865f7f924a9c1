// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "wfl/experiment.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace wfl::cli {

struct Common {
  std::string config_path;
  std::string preset;
  std::string output_dir;
  long long seed = -1;  // < 0 keeps the config value
  int jobs = 1;
};

/// Config with command-line overrides applied; output directory resolution is
/// flag, then WFLSEL_OUTPUT_DIR, then the config value.
ExperimentConfig resolve_config(const Common& common);

std::filesystem::path output_path(const ExperimentConfig& cfg, const std::string& sub);

struct CollectArgs {
  int episodes = 0;  // 0: config value
};
int cmd_collect(const Common& common, const CollectArgs& args);

struct TrainWorldArgs {
  std::string trajectories;  // directory with manifest.json
};
int cmd_train_world(const Common& common, const TrainWorldArgs& args);

struct TrainPolicyArgs {
  std::string env = "virtual";
  std::string world;
  std::string algorithm;
  int iterations = 0;
  int checkpoint_every = 1;
};
int cmd_train_policy(const Common& common, const TrainPolicyArgs& args);

struct EvaluateArgs {
  std::string policy;
  std::string baseline;
  std::string label;
  int trials = 0;
  bool sample = false;
};
int cmd_evaluate(const Common& common, const EvaluateArgs& args);

struct CompareArgs {
  std::string policy;
  std::vector<double> qos;
  bool qos_sweep = false;
  int trials = 0;
};
int cmd_compare(const Common& common, const CompareArgs& args);

struct SolveArgs {
  std::vector<int> selection;
  std::string mode = "optimized";
  long long channel_seed = -1;
};
int cmd_solve(const Common& common, const SolveArgs& args);

struct VerifyArgs {
  bool quick = false;
  std::string world;
  std::string trajectories;
};
int cmd_verify(const Common& common, const VerifyArgs& args);

}  // namespace wfl::cli
