// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0
//
// Group-relative policy optimization of the selection policy, plus a PPO
// variant with a learned value baseline.

#pragma once

#include "wfl/policy.hpp"

#include <functional>
#include <string>
#include <vector>

namespace wfl {

struct TrainConfig {
  int batch = 16;        // episodes per iteration
  int iterations = 50;
  double clip = 0.2;
  int epochs = 4;
  double learning_rate = 3e-4;
  double gamma = 1.0;
  double std_floor = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpisodeStep {
  Vector obs;  // normalized policy input
  Selection selection;
  double old_logprob = 0;
  double reward = 0;
};

struct Episode {
  std::vector<EpisodeStep> steps;
  double cwpem = 0;
};

using EpisodeBatch = std::vector<Episode>;

/// Episodes x rounds reward matrix; all episodes must have equal length.
Matrix reward_matrix(const EpisodeBatch& batch);

/// Per-round z-score across episodes with population std plus `std_floor`.
Matrix normalize_rewards(const Matrix& rewards, double std_floor = 1e-8);

/// Reverse cumulative sum along rounds, weighted by gamma^(j - t).
Matrix advantages(const Matrix& normalized, double gamma = 1.0);

struct ObjectiveValue {
  double value = 0;          // J
  double clip_fraction = 0;  // share of records whose gradient was clipped away
  double approx_kl = 0;      // mean of (rho - 1) - log rho
};

/// Clipped surrogate over whole selections. `grad`, when given, receives the
/// ascent direction dJ/dtheta.
ObjectiveValue grpo_objective(const PolicyNet& policy, const Vector& params, const EpisodeBatch& batch,
                              const Matrix& adv, double clip, Vector* grad = nullptr);

struct IterationMetrics {
  int iteration = 0;
  double mean_reward = 0;
  double mean_cwpem = 0;
  double clip_fraction = 0;
  double approx_kl = 0;
  double wall_time_s = 0;
  double value_mse = 0;  // PPO only
};

using IterationCallback = std::function<void(const IterationMetrics&, const Vector& params)>;

/// Samples `count` episodes under the given parameters.
EpisodeBatch collect_batch(const PolicyNet& policy, const Vector& params, EnvironmentBase& env,
                           int count, std::uint64_t seed);

/// Fits the policy's observation z-score on episodes of uniformly random
/// selections.
void fit_policy_normalizer(PolicyNet& policy, EnvironmentBase& env, int episodes, std::uint64_t seed);

struct TrainResult {
  Vector params;
  Vector value_params;  // PPO only
  std::vector<IterationMetrics> metrics;
};

TrainResult train_grpo(const PolicyNet& policy, Vector params, EnvironmentBase& env,
                       const TrainConfig& cfg, const IterationCallback& on_iteration = {});

/// Value network over the normalized observation.
Mlp<double> make_value_head(const PolicyNet& policy, std::vector<int> hidden = {64});

/// Mean squared error of the value head over the columns of `obs`. When
/// `grad` is given it is overwritten with the gradient.
double value_loss(const Mlp<double>& head, const Vector& params, const Matrix& obs, const Vector& targets,
                  Vector* grad = nullptr);

/// Discounted returns minus baseline values (episodes x rounds).
Matrix ppo_advantages(const Matrix& rewards, const Matrix& values, double gamma);
Matrix discounted_returns(const Matrix& rewards, double gamma);

TrainResult train_ppo(const PolicyNet& policy, Vector params, const Mlp<double>& value_head,
                      Vector value_params, EnvironmentBase& env, const TrainConfig& cfg,
                      const IterationCallback& on_iteration = {});

/// CSV with columns iteration, mean_reward, mean_cwpem, clip_fraction,
/// approx_kl, wall_time_s after a `# fingerprint=... seed=...` line.
void write_metrics_csv(const std::string& path, const std::vector<IterationMetrics>& metrics,
                       const std::string& fingerprint, std::uint64_t seed, bool include_value = false);

}  // namespace wfl
