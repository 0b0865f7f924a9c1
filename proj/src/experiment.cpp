// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0

#include "wfl/experiment.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

namespace wfl {

std::uint64_t stage_seed(const ExperimentConfig& cfg, Stage stage) {
  return derive_seed(cfg.seed, static_cast<std::uint64_t>(stage));
}

void parallel_for(int n, int jobs, const std::function<void(int)>& body) {
  const int workers = std::max(1, std::min(jobs, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i; (i = next++) < n;) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<Trajectory> collect_parallel(const EnvironmentBase& env, const BehaviorPolicy& behavior,
                                         int episodes, std::uint64_t seed, const std::string& fingerprint,
                                         int jobs) {
  require(episodes >= 1, "collect_parallel: need at least one episode");
  std::vector<Trajectory> out(episodes);
  const int workers = std::max(1, std::min(jobs, episodes));
  std::vector<std::unique_ptr<EnvironmentBase>> envs;
  for (int w = 0; w < workers; ++w) envs.push_back(env.clone());
  // Static striding keeps one environment per worker.
  parallel_for(workers, workers, [&](int w) {
    for (int e = w; e < episodes; e += workers) out[e] = collect_episode(*envs[w], behavior, seed, e, fingerprint);
  });
  return out;
}

BehaviorPolicy random_behavior(int num_devices, int select_count) {
  return [num_devices, select_count](const Observation&, Rng& rng) {
    return select_random(num_devices, select_count, rng);
  };
}

BehaviorPolicy greedy_behavior(const EnvConfig& env, double epsilon) {
  auto profiles = std::make_shared<const std::vector<DeviceProfile>>(env.profiles);
  const SystemConfig sys = env.sys;
  const double scale = env.energy_scale;
  return [profiles, sys, scale, epsilon](const Observation& obs, Rng& rng) {
    std::vector<DeviceProfile> current = *profiles;
    for (int i = 0; i < obs.num_devices(); ++i) current[i].data_size = obs.stats.data_size[i];
    const Vector costs = scale * equal_split_energies(current, ChannelState{obs.sys.gains}, sys, obs.select_count);
    return select_epsilon_greedy(obs, costs, epsilon, rng);
  };
}

BehaviorPolicy policy_behavior(std::shared_ptr<const PolicyNet> policy, std::shared_ptr<const Vector> params,
                               bool sample) {
  return [policy, params, sample](const Observation& obs, Rng& rng) {
    if (sample) return sample_action(*policy, *params, obs, obs.select_count, rng).selection;
    return greedy_action(*policy, *params, obs, obs.select_count);
  };
}

TrainedWorld train_world(const ExperimentConfig& cfg, std::span<const Trajectory> trajs) {
  WorldModelConfig wc = cfg.world;
  wc.seed = stage_seed(cfg, Stage::World);
  TrainedWorld out;
  out.model = std::make_shared<TransitionModel>(train_world_model(trajs, cfg.fl.num_devices, wc, &out.report));
  return out;
}

TrainedPolicy train_policy(const ExperimentConfig& cfg, EnvironmentBase& env, const PolicyCallback& on_iteration) {
  TrainedPolicy out;
  out.policy = std::make_shared<PolicyNet>(cfg.fl.num_devices, cfg.select_count, cfg.policy.hidden);
  fit_policy_normalizer(*out.policy, env, cfg.policy.normalizer_episodes, stage_seed(cfg, Stage::Normalizer));
  Rng rng(stage_seed(cfg, Stage::PolicyInit));
  Vector params = out.policy->init(rng);
  TrainConfig tc = cfg.policy.train;
  tc.seed = stage_seed(cfg, Stage::Policy);
  IterationCallback cb;
  if (on_iteration) {
    cb = [&](const IterationMetrics& m, const Vector& p) { on_iteration(*out.policy, m, p); };
  }
  if (cfg.policy.algorithm == Algorithm::Grpo) {
    out.result = train_grpo(*out.policy, std::move(params), env, tc, cb);
  } else {
    const Mlp<double> head = make_value_head(*out.policy);
    Vector vparams = head.init(rng);
    out.result = train_ppo(*out.policy, std::move(params), head, std::move(vparams), env, tc, cb);
  }
  return out;
}

Interval t_interval(std::span<const double> xs, double level) {
  require(xs.size() >= 2, "t_interval: need at least two values");
  require(level > 0 && level < 1, "t_interval: level must be in (0, 1)");
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double se = std::sqrt(ss / (n - 1) / n);
  boost::math::students_t dist(n - 1);
  const double q = boost::math::quantile(boost::math::complement(dist, (1 - level) / 2));
  return {mean, mean - q * se, mean + q * se};
}

double paired_t_pvalue_greater(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && a.size() >= 2, "paired_t_pvalue_greater: need equal sizes >= 2");
  const double n = static_cast<double>(a.size());
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double se = std::sqrt(ss / (n - 1) / n);
  if (se == 0) return mean > 0 ? 0.0 : 1.0;
  boost::math::students_t dist(n - 1);
  return boost::math::cdf(boost::math::complement(dist, mean / se));
}

std::vector<Trajectory> evaluate_trials(const EnvConfig& env, const BehaviorPolicy& behavior, int trials,
                                        std::uint64_t seed, const std::string& fingerprint, int jobs) {
  Environment real(env);
  return collect_parallel(real, behavior, trials, seed, fingerprint, jobs);
}

std::vector<double> cwpems(std::span<const Trajectory> trials) {
  std::vector<double> out;
  for (const auto& t : trials) out.push_back(cwpem(t));
  return out;
}

namespace {

std::ofstream open_csv(const std::string& path, const std::string& label, const std::string& fingerprint,
                       std::uint64_t seed) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f.imbue(std::locale::classic());
  f.precision(10);
  f << "# fingerprint=" << fingerprint << " seed=" << seed << " policy=" << label << "\n";
  return f;
}

}  // namespace

void write_evaluation_csv(const std::string& path, std::span<const Trajectory> trials, const std::string& label,
                          const std::string& fingerprint, std::uint64_t seed) {
  require(trials.size() >= 2, "write_evaluation_csv: need at least two trials");
  std::ofstream f = open_csv(path, label, fingerprint, seed);
  f << "trial,round,accuracy,energy_J,time_s,reward\n";
  for (std::size_t t = 0; t < trials.size(); ++t) {
    for (const auto& r : trials[t].rounds) {
      f << t << ',' << r.round << ',' << r.accuracy << ',' << r.energy << ',' << r.time << ',' << r.reward << "\n";
    }
  }
  // Per-trial totals: final accuracy, summed energy and time, CWPEM.
  std::vector<double> acc, energy, time, total;
  for (std::size_t t = 0; t < trials.size(); ++t) {
    double e = 0, s = 0;
    for (const auto& r : trials[t].rounds) {
      e += r.energy;
      s += r.time;
    }
    acc.push_back(trials[t].rounds.empty() ? 0.0 : trials[t].rounds.back().accuracy);
    energy.push_back(e);
    time.push_back(s);
    total.push_back(cwpem(trials[t]));
    f << "total," << t << ',' << acc.back() << ',' << e << ',' << s << ',' << total.back() << "\n";
  }
  const Interval ia = t_interval(acc), ie = t_interval(energy), is = t_interval(time), ir = t_interval(total);
  f << "summary,mean," << ia.mean << ',' << ie.mean << ',' << is.mean << ',' << ir.mean << "\n";
  f << "summary,ci95_low," << ia.low << ',' << ie.low << ',' << is.low << ',' << ir.low << "\n";
  f << "summary,ci95_high," << ia.high << ',' << ie.high << ',' << is.high << ',' << ir.high << "\n";
}

void write_series_csv(const std::string& path, std::span<const Trajectory> trials, const std::string& label,
                      const std::string& fingerprint, std::uint64_t seed) {
  require(!trials.empty(), "write_series_csv: no trials");
  std::ofstream f = open_csv(path, label, fingerprint, seed);
  f << "round,accuracy,energy_J,reward,cumulative_reward\n";
  const std::size_t k = trials.front().rounds.size();
  double cumulative = 0;
  for (std::size_t r = 0; r < k; ++r) {
    double a = 0, e = 0, w = 0;
    for (const auto& t : trials) {
      require(t.rounds.size() == k, "write_series_csv: trials differ in length");
      a += t.rounds[r].accuracy;
      e += t.rounds[r].energy;
      w += t.rounds[r].reward;
    }
    const double n = static_cast<double>(trials.size());
    cumulative += w / n;
    f << r << ',' << a / n << ',' << e / n << ',' << w / n << ',' << cumulative << "\n";
  }
}

}  // namespace wfl
