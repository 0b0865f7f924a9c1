// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0
//
// Executable checks: TV distance between transition kernels, exact finite
// horizon advantages on toy MDPs, the model-error advantage bound, the
// selection/allocation decoupling, and a binned error estimate for the
// learned world model.

#pragma once

#include "wfl/resource_solver.hpp"
#include "wfl/virtual_env.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace wfl {

/// Half the L1 distance between two probability vectors.
double tv_distance(const Vector& p, const Vector& q);

struct ToyMDP {
  int num_states = 0;
  int num_actions = 0;
  std::vector<Vector> transitions;  // index s * A + a, each of length S
  Matrix rewards;                   // S x A
  double reward_bound = 0;          // max |r|

  const Vector& next(int s, int a) const { return transitions[s * num_actions + a]; }
  void validate() const;
};

/// Random MDP with Dirichlet(1) rows and rewards uniform in [-rmax, rmax].
ToyMDP random_mdp(int states, int actions, double rmax, Rng& rng);

/// Mixes every row toward an independent random row: P' = (1-w) P + w Q.
ToyMDP perturb_mdp(const ToyMDP& m, double weight, Rng& rng);

/// Stationary tabular policy, one action distribution per state.
using TabularPolicy = std::vector<Vector>;
TabularPolicy random_policy(int states, int actions, Rng& rng);

/// max over (s, a) of the TV distance between the two transition rows.
double estimate_model_epsilon(const ToyMDP& p, const ToyMDP& p_hat);

/// Expected sum of the K rewards collected after taking `a` in `s` and
/// following `pi` thereafter; exact backward induction.
double exact_advantage(const ToyMDP& m, const TabularPolicy& pi, int s, int a, int horizon);

struct MonteCarloEstimate {
  double mean = 0;
  double std_error = 0;
};
MonteCarloEstimate monte_carlo_advantage(const ToyMDP& m, const TabularPolicy& pi, int s, int a,
                                         int horizon, int rollouts, Rng& rng);

struct BoundWitness {
  int policy = -1, horizon = 0, state = -1, action = -1;
  double gap = 0, bound = 0;
};

struct BoundReport {
  double epsilon = 0;
  double reward_bound = 0;
  double max_ratio = 0;  // observed / bound, 0/0 counted as 0
  int checked = 0;
  int violations = 0;
  std::optional<BoundWitness> witness;  // first violation, if any
  bool passed() const { return violations == 0; }
};

/// Checks |A_hat - A| <= (K^2 - K) R eps + K * reward_deviation for every
/// policy, horizon and (s, a). R is the larger reward bound of the two MDPs
/// and reward_deviation the largest entrywise reward difference.
BoundReport check_simulation_bound(const ToyMDP& m, const ToyMDP& m_hat,
                                   const std::vector<TabularPolicy>& policies,
                                   const std::vector<int>& horizons);

/// Two states; state 1 is absorbing with reward `rmax`, state 0 pays nothing.
/// The model moves `delta` of state 0's mass to state 1.
std::pair<ToyMDP, ToyMDP> adversarial_pair(double delta, double rmax);

struct DecouplingInstance {
  std::vector<DeviceProfile> profiles;
  ChannelState channel;
  SystemConfig sys;
  std::map<unsigned, double> accuracy;  // subset bitmask -> accuracy after one round
};

struct DecouplingGrid {
  int bandwidth_levels = 101;  // shares are multiples of B / (levels - 1)
  int fp_grid = 201;
  int refinements = 6;
};

struct DecouplingReport {
  bool joint_feasible = false;
  bool decoupled_feasible = false;
  unsigned joint_subset = 0;
  unsigned decoupled_subset = 0;
  double joint_objective = 0;
  double decoupled_objective = 0;
  double relative_gap = 0;
  bool passed = false;
};

/// Joint brute force over subsets and a grid on (bandwidth, frequency, power)
/// against the tool path (per-subset optimized allocation, then argmax).
DecouplingReport check_decoupling(const DecouplingInstance& inst, const DecouplingGrid& grid = {},
                                  double tolerance = 1e-2);

/// One-round accuracy of every non-empty subset, from a zero global model.
std::map<unsigned, double> subset_accuracies(const std::vector<Dataset>& parts, const Dataset& test,
                                             const FLConfig& fl);

struct WorldEpsilonCell {
  int accuracy_bin = 0;
  int action_class = 0;
  int count = 0;
  double tv = 0;
};

struct WorldEpsilonReport {
  double max_tv = 0;
  double mean_tv = 0;
  double ci_low = 0, ci_high = 0;  // bootstrap 95% interval of mean_tv
  std::vector<WorldEpsilonCell> cells;     // used cells
  std::vector<WorldEpsilonCell> excluded;  // fewer than min_count samples
};

/// Cells are (previous-accuracy bin, action class) where the class bins the
/// selected share of all training data. Per cell, the empirical distribution
/// of next-accuracy bins in the data is compared with that of the predictions.
WorldEpsilonReport empirical_world_epsilon(std::span<const TrainSample> samples,
                                           std::span<const double> predicted_accuracy, int num_devices,
                                           int bins = 5, int min_count = 20, int bootstrap = 200,
                                           std::uint64_t seed = 0);

/// One-step accuracy predictions of the model on the given samples.
std::vector<double> predict_accuracies(const TransitionModel& model, std::span<const TrainSample> samples);

// Randomized suites shared by the `verify` command and the acceptance runner.

/// f_max uniform in [0.5, 4] GHz, p_max log-uniform in [1 mW, 1 W], |D_n|
/// uniform in [100, 2000], other constants at their defaults.
DeviceProfile random_device_profile(Rng& rng);

struct SolverOracleReport {
  int instances = 0;
  int feasible = 0;
  int disagreements = 0;  // feasibility mismatch or relative error above tolerance
  double max_relative_error = 0;
  bool passed() const { return disagreements == 0 && feasible > 0; }
};
/// min_device_energy against the refined (f, p) grid on random profiles,
/// gains and bandwidths in [1e5, 1e6] Hz.
SolverOracleReport solver_oracle_suite(int instances, int grid, int refinements, std::uint64_t seed,
                                       double tolerance = 1e-3);

struct BoundSuiteReport {
  int tuples = 0;
  int violations = 0;
  double max_ratio = 0;
  std::vector<double> ratios;  // per tuple, observed / bound (0 when the bound is 0)
  std::optional<BoundWitness> witness;
  bool passed() const { return violations == 0; }
};
/// Random (M, M_hat, policy, K) tuples with |S| <= 5, |A| <= 3, K <= 6 and
/// shared rewards.
BoundSuiteReport simulation_bound_suite(int tuples, std::uint64_t seed);

struct DecouplingSuiteReport {
  std::vector<DecouplingReport> reports;
  int failures = 0;
  bool passed() const { return failures == 0 && !reports.empty(); }
};
/// Random one-round instances with 3 to `max_devices` devices; Xi comes from
/// one FL round per subset on a Dirichlet split of synthetic blobs.
DecouplingSuiteReport decoupling_suite(int instances, std::uint64_t seed, const DecouplingGrid& grid = {},
                                       int max_devices = 5);

struct QosMonotonicityReport {
  int instances = 0;
  int feasible = 0;  // feasible at the shorter deadline
  int violations = 0;
  bool passed() const { return violations == 0 && feasible > 0; }
};
/// Optimal per-device energy at the longer deadline never exceeds the one
/// at the shorter deadline.
QosMonotonicityReport qos_monotonicity_suite(int instances, double short_qos, double long_qos, std::uint64_t seed);

struct AllocationIndependenceReport {
  int rounds = 0;               // rounds compared
  int accuracy_mismatches = 0;  // Xi not bit-identical
  int model_mismatches = 0;     // global model not bit-identical
  int feasibility_mismatches = 0;
  bool passed() const { return rounds > 0 && accuracy_mismatches == 0 && model_mismatches == 0; }
};
/// Runs the same random selections through an EqualSplit and an Optimized
/// environment for `rounds` rounds in total.
AllocationIndependenceReport allocation_independence_suite(const EnvConfig& cfg, int rounds, std::uint64_t seed);

}  // namespace wfl
