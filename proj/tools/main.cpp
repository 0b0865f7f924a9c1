// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace wfl::cli;

namespace {

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config_path, "Experiment config file (INI)")->check(CLI::ExistingFile);
  app->add_option("-p,--preset", c.preset, "Preset when no config file is given")
      ->check(CLI::IsMember({"desk-small", "scenario-2", "paper-default"}));
  app->add_option("-o,--out", c.output_dir, "Output directory (overrides WFLSEL_OUTPUT_DIR and the config)");
  app->add_option("-s,--seed", c.seed, "Run seed (overrides the config)")->check(CLI::NonNegativeNumber);
  app->add_option("-j,--jobs", c.jobs, "Maximum worker threads")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wflsel: device selection for wireless federated learning"};
  app.require_subcommand(1);
  Common common;

  auto* collect = app.add_subcommand("collect", "Collect random-behaviour trajectories on the simulator");
  CollectArgs collect_args;
  add_common(collect, common);
  collect->add_option("-n,--episodes", collect_args.episodes, "Number of trajectories (default: config)");

  auto* world = app.add_subcommand("train-world", "Train the statistics world model");
  TrainWorldArgs world_args;
  add_common(world, common);
  world->add_option("-t,--trajectories", world_args.trajectories, "Trajectory directory (default: <out>/trajectories)");

  auto* policy = app.add_subcommand("train-policy", "Train the selection policy");
  TrainPolicyArgs policy_args;
  add_common(policy, common);
  policy->add_option("--env", policy_args.env, "Training environment")->check(CLI::IsMember({"virtual", "real"}));
  policy->add_option("-w,--world", policy_args.world, "World model file (default: <out>/world/model.bin)");
  policy->add_option("--algorithm", policy_args.algorithm, "Override the configured algorithm")
      ->check(CLI::IsMember({"grpo", "ppo"}));
  policy->add_option("--iterations", policy_args.iterations, "Override the configured iterations");
  policy->add_option("--checkpoint-every", policy_args.checkpoint_every, "Iterations between checkpoints (0: none)");

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a policy or baseline on the simulator");
  EvaluateArgs eval_args;
  add_common(evaluate, common);
  auto* pol_opt = evaluate->add_option("--policy", eval_args.policy, "Policy checkpoint");
  evaluate->add_option("--baseline", eval_args.baseline, "Baseline instead of a policy")
      ->check(CLI::IsMember({"random", "greedy"}))
      ->excludes(pol_opt);
  evaluate->add_option("--label", eval_args.label, "Name used for the output file");
  evaluate->add_option("--trials", eval_args.trials, "Number of trials (default: config)");
  evaluate->add_flag("--sample", eval_args.sample, "Sample from the policy instead of greedy decoding");

  auto* compare = app.add_subcommand("compare", "Random, epsilon-greedy and a trained policy on shared seeds");
  CompareArgs compare_args;
  add_common(compare, common);
  compare->add_option("--policy", compare_args.policy, "Policy checkpoint (omit to compare baselines only)");
  compare->add_option("--qos", compare_args.qos, "Deadlines to evaluate (s)");
  compare->add_flag("--qos-sweep", compare_args.qos_sweep, "Evaluate at T_QoS = 15 s and 20 s");
  compare->add_option("--trials", compare_args.trials, "Number of trials (default: config)");

  auto* solve = app.add_subcommand("solve", "Allocate resources for one selection");
  SolveArgs solve_args;
  add_common(solve, common);
  solve->add_option("--select", solve_args.selection, "Device indices (default: the first m)")->delimiter(',');
  solve->add_option("--mode", solve_args.mode, "Bandwidth mode")->check(CLI::IsMember({"equal", "optimized"}));
  solve->add_option("--channel-seed", solve_args.channel_seed, "Channel draw seed (default: run seed)");

  auto* verify = app.add_subcommand("verify", "Run the verification checks");
  VerifyArgs verify_args;
  add_common(verify, common);
  verify->add_flag("--quick", verify_args.quick, "Run the fast subset only");
  verify->add_option("-w,--world", verify_args.world, "World model for the error estimate");
  verify->add_option("-t,--trajectories", verify_args.trajectories, "Trajectories for the error estimate");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*collect) return cmd_collect(common, collect_args);
    if (*world) return cmd_train_world(common, world_args);
    if (*policy) return cmd_train_policy(common, policy_args);
    if (*evaluate) return cmd_evaluate(common, eval_args);
    if (*compare) return cmd_compare(common, compare_args);
    if (*solve) return cmd_solve(common, solve_args);
    if (*verify) return cmd_verify(common, verify_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
