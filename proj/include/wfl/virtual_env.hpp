// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0
//
// Learned statistics transition composed with the exact system part. The
// model reads a window of recent (statistics, selection) steps and predicts
// the next per-device statistics together with the round accuracy.

#pragma once

#include "wfl/environment.hpp"
#include "wfl/mlp.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace wfl {

/// Per-feature z-score with a floor on the spread.
struct Normalizer {
  Vector mean;
  Vector scale;

  static Normalizer fit(const Matrix& columns, double floor = 1e-8);
  Vector normalize(const Vector& x) const { return ((x - mean).array() / scale.array()).matrix(); }
  Vector denormalize(const Vector& z) const { return (z.array() * scale.array()).matrix() + mean; }
};

/// One model step: flattened statistics (5N+1) followed by a multi-hot
/// selection (N).
Vector step_input(const Vector& flat_stats, std::span<const int> selection, int num_devices);

struct TrainSample {
  std::vector<Vector> history;  // raw step inputs, oldest first, last = current round
  Vector target;                // [l, F, gi, sa] per device, then accuracy
  double prev_accuracy = 0;
  int trajectory = -1;
};

/// Turns feasible rounds into samples; infeasible rounds leave the
/// statistics untouched and are skipped.
std::vector<TrainSample> build_samples(std::span<const Trajectory> trajs, int num_devices, int window);

struct WorldModelConfig {
  int window = 4;
  std::vector<int> hidden{128, 128};
  int epochs = 200;
  double learning_rate = 1e-3;
  int batch = 8;               // trajectories per step
  double holdout = 0.1;
  std::uint64_t seed = 0;
};

struct WorldPrediction {
  Vector next_stats;  // flattened, 5N+1
  double accuracy = 0;
};

class TransitionModel {
 public:
  TransitionModel() = default;
  TransitionModel(int num_devices, int window, std::vector<int> hidden);

  int num_devices() const { return num_devices_; }
  int window() const { return window_; }
  int step_dim() const { return (StatState::kPerDevice + 1) * num_devices_ + 1; }
  int target_dim() const { return 4 * num_devices_ + 1; }
  const Mlp<double>& net() const { return net_; }
  const std::vector<int>& hidden() const { return hidden_; }

  /// Network input in normalized units; missing history slots are zero.
  Vector encode(std::span<const Vector> history) const;
  /// Normalized target for a sample.
  Vector encode_target(const Vector& target) const { return out_norm.normalize(target); }

  /// Deterministic one-step prediction from the latest `window` steps.
  WorldPrediction predict(std::span<const Vector> history) const;

  void save(const std::string& path, const std::string& fingerprint = "") const;
  static TransitionModel load(const std::string& path, std::string* fingerprint = nullptr);

  Vector params;
  Normalizer in_norm;
  Normalizer out_norm;

 private:
  int num_devices_ = 0;
  int window_ = 0;
  std::vector<int> hidden_;
  Mlp<double> net_;
};

/// Mean over trajectories of the per-trajectory mean squared error in
/// normalized target units, and its gradient.
double world_loss(const TransitionModel& model, const Vector& params,
                  std::span<const TrainSample* const> samples, Vector* grad);

struct WorldTrainReport {
  std::vector<double> train_mse;    // per epoch
  std::vector<double> heldout_mse;  // per epoch
  std::vector<int> train_trajectories;
  std::vector<int> heldout_trajectories;
  double heldout_accuracy_mse = 0;     // raw units, one-step predictions
  double persistence_accuracy_mse = 0; // previous accuracy as the prediction
};

TransitionModel train_world_model(std::span<const Trajectory> trajs, int num_devices,
                                  const WorldModelConfig& cfg, WorldTrainReport* report = nullptr);

/// Same reset/step contract as Environment; the statistics come from the
/// model, the system part is the shared exact implementation.
class VirtualEnvironment final : public EnvironmentBase {
 public:
  VirtualEnvironment(EnvConfig cfg, std::shared_ptr<const TransitionModel> model);
  VirtualEnvironment(const VirtualEnvironment& other);
  VirtualEnvironment& operator=(const VirtualEnvironment&) = delete;

  Observation reset(std::uint64_t seed) override;
  StepResult step(std::span<const int> selection) override;
  const EnvConfig& config() const override { return cfg_; }
  std::unique_ptr<EnvironmentBase> clone() const override;

 private:
  Observation make_observation() const;

  EnvConfig cfg_;
  std::shared_ptr<const TransitionModel> model_;
  SystemPart system_;
  StatState stats_;
  std::vector<Vector> history_;
  int round_ = 0;
};

using BehaviorPolicy = std::function<Selection(const Observation&, Rng&)>;

/// Runs `episodes` episodes; episode i uses seed derive_seed(seed, i) for the
/// environment and derive_seed(seed, i + 1'000'000) for the behaviour.
std::vector<Trajectory> collect_trajectories(EnvironmentBase& env, const BehaviorPolicy& behavior,
                                             int episodes, std::uint64_t seed,
                                             const std::string& fingerprint = "");

std::uint64_t episode_seed(std::uint64_t seed, int episode);

/// Episode `episode` of collect_trajectories on its own.
Trajectory collect_episode(EnvironmentBase& env, const BehaviorPolicy& behavior, std::uint64_t seed, int episode,
                           const std::string& fingerprint = "");

struct ReplayReport {
  int rounds = 0;
  double mean_reward_error = 0;    // mean |r_env - r_recorded| per round
  double mean_accuracy_error = 0;
};

/// Re-runs each trajectory's selections in `env` from the recorded seed and
/// compares the per-round rewards with the recorded ones.
ReplayReport replay_rewards(EnvironmentBase& env, std::span<const Trajectory> trajs);

}  // namespace wfl
