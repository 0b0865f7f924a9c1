// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include "wfl/verification.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

namespace wfl::cli {

ExperimentConfig resolve_config(const Common& common) {
  ExperimentConfig cfg;
  if (!common.config_path.empty()) {
    require(common.preset.empty(), "--preset and --config are mutually exclusive; set [run] preset in the file");
    cfg = load_config(common.config_path);
  } else {
    cfg = make_preset(common.preset.empty() ? "desk-small" : common.preset);
  }
  if (common.seed >= 0) cfg.seed = static_cast<std::uint64_t>(common.seed);
  if (!common.output_dir.empty()) {
    cfg.output_dir = common.output_dir;
  } else if (const char* env = std::getenv("WFLSEL_OUTPUT_DIR"); env && *env) {
    cfg.output_dir = env;
  }
  cfg.validate();
  return cfg;
}

fs::path output_path(const ExperimentConfig& cfg, const std::string& sub) {
  fs::path p = fs::path(cfg.output_dir) / sub;
  fs::create_directories(p);
  return p;
}

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  f.imbue(std::locale::classic());
  f.precision(10);
  return f;
}

void write_config_copy(const ExperimentConfig& cfg, const fs::path& dir) {
  auto f = open_out(dir / "config.ini");
  f << "# fingerprint=" << cfg.fingerprint() << " seed=" << cfg.seed << "\n" << cfg.to_ini();
}

std::string header(const ExperimentConfig& cfg) {
  return "# fingerprint=" + cfg.fingerprint() + " seed=" + std::to_string(cfg.seed);
}

std::vector<Trajectory> load_manifest(const fs::path& dir, const ExperimentConfig& cfg) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw std::runtime_error("missing trajectories: no manifest.json in " + dir.string());
  const nlohmann::json m = nlohmann::json::parse(f);
  const std::string fp = m.at("fingerprint").get<std::string>();
  require(fp == cfg.fingerprint(), "trajectories in " + dir.string() + " were collected with config " + fp +
                                       ", current config is " + cfg.fingerprint());
  std::vector<Trajectory> out;
  for (const auto& e : m.at("files")) out.push_back(load_trajectory((dir / e.at("file").get<std::string>()).string()));
  require(!out.empty(), "manifest lists no trajectories");
  return out;
}

std::shared_ptr<const TransitionModel> load_world(const std::string& path) {
  if (!fs::exists(path)) throw std::runtime_error("missing world model " + path + " (run train-world first)");
  return std::make_shared<TransitionModel>(TransitionModel::load(path));
}

struct LoadedPolicy {
  std::shared_ptr<const PolicyNet> net;
  std::shared_ptr<const Vector> params;
  std::string fingerprint;
};

LoadedPolicy load_policy(const std::string& path, const EnvConfig& env) {
  if (!fs::exists(path)) throw std::runtime_error("missing policy " + path);
  LoadedPolicy p;
  auto params = std::make_shared<Vector>();
  p.net = std::make_shared<PolicyNet>(PolicyNet::load(path, *params, &p.fingerprint));
  p.params = params;
  require(p.net->num_devices() == env.num_devices() && p.net->select_count() == env.select_count,
          "policy was trained for a different device count or selection size");
  return p;
}

void print_interval(const std::string& label, const Interval& ci) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(6) << label << ": mean CWPEM " << ci.mean << " (95% CI " << ci.low << " .. " << ci.high
     << ")";
  std::cout << os.str() << "\n";
}

}  // namespace

int cmd_collect(const Common& common, const CollectArgs& args) {
  const ExperimentConfig cfg = resolve_config(common);
  const int episodes = args.episodes > 0 ? args.episodes : cfg.trajectories;
  const EnvConfig env = make_env_config(cfg);
  Environment real(env);
  const auto trajs = collect_parallel(real, random_behavior(env.num_devices(), env.select_count), episodes,
                                      stage_seed(cfg, Stage::Collect), cfg.fingerprint(), common.jobs);
  const fs::path dir = output_path(cfg, "trajectories");
  nlohmann::json manifest;
  manifest["fingerprint"] = cfg.fingerprint();
  manifest["seed"] = cfg.seed;
  manifest["episodes"] = episodes;
  manifest["rounds"] = cfg.sys.num_rounds;
  manifest["files"] = nlohmann::json::array();
  for (int e = 0; e < episodes; ++e) {
    char name[32];
    std::snprintf(name, sizeof name, "episode_%04d.ndjson", e);
    save_trajectory(trajs[e], (dir / name).string());
    manifest["files"].push_back({{"file", name}, {"seed", trajs[e].seed}, {"rounds", trajs[e].rounds.size()}});
  }
  auto f = open_out(dir / "manifest.json");
  f << manifest.dump(2) << "\n";
  write_config_copy(cfg, dir);
  std::cout << "collected " << episodes << " trajectories into " << dir.string() << "\n";
  return 0;
}

int cmd_train_world(const Common& common, const TrainWorldArgs& args) {
  const ExperimentConfig cfg = resolve_config(common);
  const fs::path src = args.trajectories.empty() ? fs::path(cfg.output_dir) / "trajectories" : fs::path(args.trajectories);
  const auto trajs = load_manifest(src, cfg);
  const TrainedWorld world = train_world(cfg, trajs);
  const fs::path dir = output_path(cfg, "world");
  world.model->save((dir / "model.bin").string(), cfg.fingerprint());

  auto csv = open_out(dir / "mse.csv");
  csv << header(cfg) << "\nepoch,train_mse,heldout_mse\n";
  for (std::size_t e = 0; e < world.report.train_mse.size(); ++e) {
    csv << e << ',' << world.report.train_mse[e] << ',' << world.report.heldout_mse[e] << "\n";
  }

  std::vector<Trajectory> held;
  for (int i : world.report.heldout_trajectories) held.push_back(trajs[i]);
  VirtualEnvironment venv(make_env_config(cfg), world.model);
  const ReplayReport replay = replay_rewards(venv, held);
  const bool beats = world.report.heldout_accuracy_mse < world.report.persistence_accuracy_mse;
  auto rep = open_out(dir / "report.txt");
  rep << header(cfg) << "\n"
      << "train_trajectories " << world.report.train_trajectories.size() << "\n"
      << "heldout_trajectories " << world.report.heldout_trajectories.size() << "\n"
      << "heldout_accuracy_mse " << world.report.heldout_accuracy_mse << "\n"
      << "persistence_accuracy_mse " << world.report.persistence_accuracy_mse << "\n"
      << "replay_mean_reward_error " << replay.mean_reward_error << "\n"
      << "beats_persistence " << (beats ? "yes" : "no") << "\n";
  std::cout << "world model: held-out accuracy MSE " << world.report.heldout_accuracy_mse << ", persistence "
            << world.report.persistence_accuracy_mse << ", replay reward error " << replay.mean_reward_error << "\n";
  if (!beats) {
    std::cerr << "held-out accuracy MSE does not beat the persistence baseline\n";
    return 3;
  }
  return 0;
}

int cmd_train_policy(const Common& common, const TrainPolicyArgs& args) {
  ExperimentConfig cfg = resolve_config(common);
  if (args.algorithm == "grpo") cfg.policy.algorithm = Algorithm::Grpo;
  if (args.algorithm == "ppo") cfg.policy.algorithm = Algorithm::Ppo;
  if (args.iterations > 0) cfg.policy.train.iterations = args.iterations;
  cfg.validate();
  const EnvConfig env = make_env_config(cfg);
  std::unique_ptr<EnvironmentBase> train_env;
  if (args.env == "real") {
    train_env = std::make_unique<Environment>(env);
  } else {
    const std::string path = args.world.empty() ? (fs::path(cfg.output_dir) / "world" / "model.bin").string() : args.world;
    train_env = std::make_unique<VirtualEnvironment>(env, load_world(path));
  }
  const fs::path dir = output_path(cfg, "policy");
  const fs::path ckpt = dir / "checkpoints";
  if (args.checkpoint_every > 0) fs::create_directories(ckpt);

  auto on_iteration = [&](const PolicyNet& net, const IterationMetrics& m, const Vector& params) {
    if (args.checkpoint_every > 0 && (m.iteration + 1) % args.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "iter_%04d.bin", m.iteration);
      net.save((ckpt / name).string(), params, cfg.fingerprint());
    }
    std::cout << "iteration " << m.iteration << " mean CWPEM " << m.mean_cwpem << " clip " << m.clip_fraction
              << " kl " << m.approx_kl << "\n";
  };
  const TrainedPolicy trained = train_policy(cfg, *train_env, on_iteration);
  trained.policy->save((dir / "policy.bin").string(), trained.result.params, cfg.fingerprint());
  write_metrics_csv((dir / "training.csv").string(), trained.result.metrics, cfg.fingerprint(), cfg.seed,
                    cfg.policy.algorithm == Algorithm::Ppo);
  write_config_copy(cfg, dir);
  std::cout << "policy written to " << (dir / "policy.bin").string() << "\n";
  return 0;
}

int cmd_evaluate(const Common& common, const EvaluateArgs& args) {
  const ExperimentConfig cfg = resolve_config(common);
  const EnvConfig env = make_env_config(cfg);
  const int trials = args.trials > 0 ? args.trials : cfg.eval.trials;
  require(trials >= 2, "--trials must be >= 2");
  BehaviorPolicy behavior;
  std::string label = args.label;
  if (!args.policy.empty()) {
    const LoadedPolicy p = load_policy(args.policy, env);
    behavior = policy_behavior(p.net, p.params, args.sample);
    if (label.empty()) label = "policy";
  } else {
    const std::string base = args.baseline.empty() ? "random" : args.baseline;
    behavior = base == "random" ? random_behavior(env.num_devices(), env.select_count)
                                : greedy_behavior(env, cfg.eval.greedy_epsilon);
    if (label.empty()) label = base;
  }
  const auto results = evaluate_trials(env, behavior, trials, stage_seed(cfg, Stage::Eval), cfg.fingerprint(),
                                       common.jobs);
  const fs::path dir = output_path(cfg, "eval");
  write_evaluation_csv((dir / (label + ".csv")).string(), results, label, cfg.fingerprint(), cfg.seed);
  const auto c = cwpems(results);
  print_interval(label, t_interval(c));
  return 0;
}

int cmd_compare(const Common& common, const CompareArgs& args) {
  const ExperimentConfig base = resolve_config(common);
  std::vector<double> qos = args.qos;
  if (args.qos_sweep) qos.insert(qos.end(), {15.0, 20.0});
  if (qos.empty()) qos.push_back(base.sys.qos_time);
  const int trials = args.trials > 0 ? args.trials : base.eval.trials;
  require(trials >= 2, "--trials must be >= 2");

  const fs::path dir = output_path(base, "compare");
  auto csv = open_out(dir / "comparison.csv");
  csv << header(base) << "\nqos_time,policy,trial,cwpem,final_accuracy,energy_J\n";
  std::ostringstream summary;
  summary.imbue(std::locale::classic());
  summary.precision(10);
  for (double q : qos) {
    ExperimentConfig cfg = base;
    cfg.sys.qos_time = q;
    const EnvConfig env = make_env_config(cfg);
    std::vector<std::pair<std::string, BehaviorPolicy>> entries{
        {"random", random_behavior(env.num_devices(), env.select_count)},
        {"greedy", greedy_behavior(env, cfg.eval.greedy_epsilon)}};
    if (!args.policy.empty()) {
      const LoadedPolicy p = load_policy(args.policy, env);
      entries.emplace_back("policy", policy_behavior(p.net, p.params));
    }
    // Trial seeds come from the base config, so every policy and deadline
    // sees the same channels and partition.
    std::vector<std::vector<double>> totals;
    for (const auto& [name, behavior] : entries) {
      const auto results = evaluate_trials(env, behavior, trials, stage_seed(base, Stage::Eval), base.fingerprint(),
                                           common.jobs);
      for (std::size_t t = 0; t < results.size(); ++t) {
        double energy = 0;
        for (const auto& r : results[t].rounds) energy += r.energy;
        csv << q << ',' << name << ',' << t << ',' << cwpem(results[t]) << ','
            << results[t].rounds.back().accuracy << ',' << energy << "\n";
      }
      std::ostringstream series;
      series.imbue(std::locale::classic());
      series << "series_" << name << "_qos" << q << ".csv";
      write_series_csv((dir / series.str()).string(), results, name, base.fingerprint(), base.seed);
      totals.push_back(cwpems(results));
      const Interval ci = t_interval(totals.back());
      summary << "summary," << q << ',' << name << ",mean_cwpem," << ci.mean << ",ci95," << ci.low << ','
              << ci.high;
      if (totals.size() > 1) summary << ",p_vs_random," << paired_t_pvalue_greater(totals.back(), totals.front());
      summary << "\n";
      std::ostringstream label;
      label.imbue(std::locale::classic());
      label << name << " @ T_QoS=" << q;
      print_interval(label.str(), ci);
    }
  }
  csv << summary.str();
  return 0;
}

int cmd_solve(const Common& common, const SolveArgs& args) {
  const ExperimentConfig cfg = resolve_config(common);
  const EnvConfig env = make_env_config(cfg);
  Selection sel = args.selection;
  if (sel.empty()) {
    for (int i = 0; i < env.select_count; ++i) sel.push_back(i);
  }
  for (int d : sel) require(d >= 0 && d < env.num_devices(), "--select index out of range");
  const std::uint64_t seed = args.channel_seed >= 0 ? static_cast<std::uint64_t>(args.channel_seed) : cfg.seed;
  const EpisodeStart start = start_episode(env, seed);
  std::vector<DeviceProfile> profiles = env.profiles;
  for (int i = 0; i < env.num_devices(); ++i) profiles[i].data_size = static_cast<double>(start.partitions[i].size());
  Rng rng(seed);
  const ChannelState channel = sample_channel(rng, env.num_devices(), env.sys.gain_lo, env.sys.gain_hi);
  const BandwidthMode mode = args.mode == "equal" ? BandwidthMode::EqualSplit : BandwidthMode::Optimized;
  const ResourceAllocation a = allocate(sel, profiles, channel, env.sys, mode);

  const fs::path dir = output_path(cfg, "solve");
  auto csv = open_out(dir / "allocation.csv");
  csv << header(cfg) << "\ndevice,freq_hz,power_w,bandwidth_hz,t_cmp_s,t_com_s,e_cmp_J,e_com_J\n";
  std::cout << (a.feasible ? "feasible" : "infeasible") << "\n";
  for (const auto& d : a.devices) {
    csv << d.device << ',' << d.freq << ',' << d.power << ',' << d.bandwidth << ',' << d.cost.t_cmp << ','
        << d.cost.t_com << ',' << d.cost.e_cmp << ',' << d.cost.e_com << "\n";
    std::cout << "device " << d.device << ": f=" << d.freq << " Hz p=" << d.power << " W B=" << d.bandwidth
              << " Hz time=" << d.cost.time() << " s energy=" << d.cost.energy() << " J\n";
  }
  if (a.feasible) std::cout << "total energy " << a.totals.energy << " J, round time " << a.totals.time << " s\n";
  return a.feasible ? 0 : 4;
}

namespace {

struct CheckLine {
  std::string name;
  bool passed = false;
  std::string detail;
};

template <typename F>
CheckLine timed(const std::string& name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckLine c = body();
  c.name = name;
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(3) << " [" << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
     << " s]";
  c.detail += os.str();
  return c;
}

std::string fmt_num(double x) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(6) << x;
  return os.str();
}

}  // namespace

int cmd_verify(const Common& common, const VerifyArgs& args) {
  const ExperimentConfig cfg = resolve_config(common);
  const bool quick = args.quick;
  const std::uint64_t seed = derive_seed(cfg.seed, 900);
  std::vector<CheckLine> lines;
  BoundSuiteReport bound;

  lines.push_back(timed("tv-metric", [&] {
    Rng rng(derive_seed(seed, 1));
    int bad = 0;
    const int n = quick ? 100 : 1000;
    for (int i = 0; i < n; ++i) {
      std::uniform_int_distribution<int> dim(1, 6);
      const int d = dim(rng);
      auto draw = [&] {
        std::gamma_distribution<double> g(1.0, 1.0);
        Vector v(d);
        for (auto& x : v) x = g(rng);
        return Vector(v / v.sum());
      };
      const Vector p = draw(), q = draw(), r = draw();
      const double pq = tv_distance(p, q), qp = tv_distance(q, p);
      if (pq != qp || pq < 0 || pq > 1 || tv_distance(p, p) != 0 || pq > tv_distance(p, r) + tv_distance(r, q) + 1e-15)
        ++bad;
    }
    return CheckLine{"", bad == 0, std::to_string(n) + " random triples, " + std::to_string(bad) + " failures"};
  }));

  lines.push_back(timed("solver-oracle", [&] {
    const auto r = quick ? solver_oracle_suite(5, 401, 2, derive_seed(seed, 2))
                         : solver_oracle_suite(50, 2001, 2, derive_seed(seed, 2));
    return CheckLine{"", r.passed(),
                     std::to_string(r.feasible) + " feasible profiles, max relative error " +
                         fmt_num(r.max_relative_error)};
  }));

  lines.push_back(timed("qos-monotonicity", [&] {
    const auto r = qos_monotonicity_suite(quick ? 50 : 200, 15.0, 20.0, derive_seed(seed, 3));
    return CheckLine{"", r.passed(),
                     std::to_string(r.feasible) + " feasible instances, " + std::to_string(r.violations) +
                         " violations"};
  }));

  lines.push_back(timed("simulation-bound", [&] {
    bound = simulation_bound_suite(quick ? 100 : 1000, derive_seed(seed, 4));
    return CheckLine{"", bound.passed(),
                     std::to_string(bound.tuples) + " tuples, " + std::to_string(bound.violations) +
                         " violations, max ratio " + fmt_num(bound.max_ratio)};
  }));

  lines.push_back(timed("adversarial-bound", [&] {
    double worst = 0;
    bool ok = true;
    for (double delta : {0.01, 0.1, 0.5}) {
      const auto [m, h] = adversarial_pair(delta, 1.0);
      TabularPolicy pi{(Vector(1) << 1.0).finished(), (Vector(1) << 1.0).finished()};
      const BoundReport r = check_simulation_bound(m, h, {pi}, {1, 2, 3, 4, 5, 6});
      ok = ok && r.passed();
      worst = std::max(worst, r.max_ratio);
    }
    return CheckLine{"", ok, "max ratio " + fmt_num(worst)};
  }));

  lines.push_back(timed("decoupling", [&] {
    DecouplingGrid grid;
    if (quick) {
      grid.bandwidth_levels = 21;
      grid.fp_grid = 101;
    }
    const auto r = decoupling_suite(quick ? 2 : 20, derive_seed(seed, 5), grid);
    double gap = 0;
    for (const auto& x : r.reports) gap = std::max(gap, x.relative_gap);
    return CheckLine{"", r.passed(),
                     std::to_string(r.reports.size()) + " instances, " + std::to_string(r.failures) +
                         " failures, max relative gap " + fmt_num(gap)};
  }));

  lines.push_back(timed("allocation-independence", [&] {
    EnvConfig env = make_env_config(cfg);
    env.sys.qos_time = 1e3;  // every selection feasible under both modes
    const auto r = allocation_independence_suite(env, quick ? 4 : 20, derive_seed(seed, 6));
    return CheckLine{"", r.passed(),
                     std::to_string(r.rounds) + " rounds, " + std::to_string(r.accuracy_mismatches) +
                         " accuracy and " + std::to_string(r.model_mismatches) + " model mismatches"};
  }));

  if (!quick) {
    lines.push_back(timed("advantage-monte-carlo", [&] {
      Rng rng(derive_seed(seed, 7));
      const ToyMDP m = random_mdp(3, 2, 1.0, rng);
      const TabularPolicy pi = random_policy(3, 2, rng);
      const double exact = exact_advantage(m, pi, 0, 1, 5);
      const MonteCarloEstimate mc = monte_carlo_advantage(m, pi, 0, 1, 5, 200000, rng);
      const bool ok = std::abs(mc.mean - exact) <= 3 * mc.std_error;
      return CheckLine{"", ok, "exact " + fmt_num(exact) + ", estimate " + fmt_num(mc.mean) + " +- " +
                                   fmt_num(mc.std_error)};
    }));
  }

  if (!args.world.empty()) {
    lines.push_back(timed("world-epsilon", [&] {
      require(!args.trajectories.empty(), "--world needs --trajectories with held-out data");
      const auto model = load_world(args.world);
      const auto trajs = load_manifest(args.trajectories, cfg);
      const auto samples = build_samples(trajs, cfg.fl.num_devices, model->window());
      const auto pred = predict_accuracies(*model, samples);
      const auto r = empirical_world_epsilon(samples, pred, cfg.fl.num_devices, 5, 20, 200, derive_seed(seed, 8));
      return CheckLine{"", true,
                       "max TV " + fmt_num(r.max_tv) + ", mean TV " + fmt_num(r.mean_tv) + " (95% CI " +
                           fmt_num(r.ci_low) + " .. " + fmt_num(r.ci_high) + "), " + std::to_string(r.cells.size()) +
                           " cells, " + std::to_string(r.excluded.size()) + " excluded"};
    }));
  }

  const fs::path dir = output_path(cfg, "verify");
  auto report = open_out(dir / "report.txt");
  report << header(cfg) << (quick ? " mode=quick" : " mode=full") << "\n";
  bool all = true;
  for (const auto& l : lines) {
    const std::string text = std::string(l.passed ? "PASS " : "FAIL ") + l.name + ": " + l.detail;
    report << text << "\n";
    std::cout << text << "\n";
    all = all && l.passed;
  }
  report << "simulation-bound max ratio " << fmt_num(bound.max_ratio) << "\n";
  auto ratios = open_out(dir / "ratios.csv");
  ratios << header(cfg) << "\ntuple,ratio\n";
  for (std::size_t i = 0; i < bound.ratios.size(); ++i) ratios << i << ',' << bound.ratios[i] << "\n";
  std::cout << (all ? "all checks passed" : "some checks failed") << "\n";
  return all ? 0 : 1;
}

}  // namespace wfl::cli
