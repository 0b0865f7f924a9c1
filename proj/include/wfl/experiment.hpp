// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded pipeline stages shared by the command-line tool and the acceptance
// runner: collection, world-model and policy training, evaluation on the
// real simulator and summary statistics.

#pragma once

#include "wfl/config.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace wfl {

/// Seed streams of the pipeline stages, all derived from the config seed.
enum class Stage : std::uint64_t { Collect = 101, World = 102, PolicyInit = 103, Normalizer = 104, Policy = 105, Eval = 106 };
std::uint64_t stage_seed(const ExperimentConfig& cfg, Stage stage);

/// Calls body(i) for i in [0, n) on at most `jobs` threads. The first
/// exception is rethrown after all workers stop.
void parallel_for(int n, int jobs, const std::function<void(int)>& body);

/// collect_trajectories with episodes spread over cloned environments;
/// output is identical for any `jobs`.
std::vector<Trajectory> collect_parallel(const EnvironmentBase& env, const BehaviorPolicy& behavior,
                                         int episodes, std::uint64_t seed, const std::string& fingerprint,
                                         int jobs = 1);

BehaviorPolicy random_behavior(int num_devices, int select_count);

/// epsilon-greedy over utility with the per-device equal-split energy as the
/// known cost, scaled the same way as in the reward.
BehaviorPolicy greedy_behavior(const EnvConfig& env, double epsilon);

/// Greedy decoding of a trained policy, or sampling when `sample` is set.
BehaviorPolicy policy_behavior(std::shared_ptr<const PolicyNet> policy, std::shared_ptr<const Vector> params,
                               bool sample = false);

struct TrainedWorld {
  std::shared_ptr<const TransitionModel> model;
  WorldTrainReport report;
};
TrainedWorld train_world(const ExperimentConfig& cfg, std::span<const Trajectory> trajs);

struct TrainedPolicy {
  std::shared_ptr<PolicyNet> policy;
  TrainResult result;
};
using PolicyCallback = std::function<void(const PolicyNet&, const IterationMetrics&, const Vector& params)>;

/// Fits the observation normalizer, initializes and trains with the
/// configured algorithm inside `env`.
TrainedPolicy train_policy(const ExperimentConfig& cfg, EnvironmentBase& env, const PolicyCallback& cb = {});

struct Interval {
  double mean = 0;
  double low = 0;
  double high = 0;
};

/// Student-t interval of the mean.
Interval t_interval(std::span<const double> xs, double level = 0.95);

/// One-sided paired t-test of mean(a - b) > 0; returns the p-value.
double paired_t_pvalue_greater(std::span<const double> a, std::span<const double> b);

/// Evaluates on `trials` seeded real-simulator episodes. Trial t uses the same
/// environment seed for every behaviour, so results are paired.
std::vector<Trajectory> evaluate_trials(const EnvConfig& env, const BehaviorPolicy& behavior, int trials,
                                        std::uint64_t seed, const std::string& fingerprint, int jobs = 1);

std::vector<double> cwpems(std::span<const Trajectory> trials);

/// Per-round rows, then per-trial totals and summary rows (see README).
void write_evaluation_csv(const std::string& path, std::span<const Trajectory> trials, const std::string& label,
                          const std::string& fingerprint, std::uint64_t seed);

/// Mean per-round accuracy, energy and reward across trials, one row per round.
void write_series_csv(const std::string& path, std::span<const Trajectory> trials, const std::string& label,
                      const std::string& fingerprint, std::uint64_t seed);

}  // namespace wfl
