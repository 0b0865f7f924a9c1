// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0

#include "wfl/verification.hpp"

#include "wfl/environment.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <functional>
#include <limits>
#include <numeric>
#include <tuple>

namespace wfl {

double tv_distance(const Vector& p, const Vector& q) {
  require(p.size() == q.size(), "tv_distance: dimension mismatch");
  require(std::abs(p.sum() - 1) <= 1e-9 && std::abs(q.sum() - 1) <= 1e-9, "tv_distance: inputs must sum to 1");
  return std::clamp(0.5 * (p - q).cwiseAbs().sum(), 0.0, 1.0);
}

void ToyMDP::validate() const {
  require(num_states >= 1 && num_actions >= 1, "ToyMDP: empty state or action set");
  require(transitions.size() == static_cast<std::size_t>(num_states * num_actions), "ToyMDP: transition count");
  require(rewards.rows() == num_states && rewards.cols() == num_actions, "ToyMDP: reward shape");
  for (const auto& row : transitions) {
    require(row.size() == num_states, "ToyMDP: transition row length");
    require((row.array() >= 0).all() && std::abs(row.sum() - 1) <= 1e-12, "ToyMDP: row is not a distribution");
  }
  require(rewards.cwiseAbs().maxCoeff() <= reward_bound * (1 + 1e-15), "ToyMDP: reward exceeds bound");
}

namespace {

Vector dirichlet_row(int n, Rng& rng) {
  std::gamma_distribution<double> g(1.0, 1.0);
  Vector v(n);
  for (auto& x : v) x = g(rng);
  return v / v.sum();
}

}  // namespace

ToyMDP random_mdp(int states, int actions, double rmax, Rng& rng) {
  ToyMDP m;
  m.num_states = states;
  m.num_actions = actions;
  m.reward_bound = rmax;
  std::uniform_real_distribution<double> u(-rmax, rmax);
  m.rewards.resize(states, actions);
  for (int s = 0; s < states; ++s) {
    for (int a = 0; a < actions; ++a) {
      m.rewards(s, a) = u(rng);
      m.transitions.push_back(dirichlet_row(states, rng));
    }
  }
  return m;
}

ToyMDP perturb_mdp(const ToyMDP& m, double weight, Rng& rng) {
  ToyMDP out = m;
  for (auto& row : out.transitions) {
    row = (1 - weight) * row + weight * dirichlet_row(m.num_states, rng);
    row /= row.sum();
  }
  return out;
}

TabularPolicy random_policy(int states, int actions, Rng& rng) {
  TabularPolicy pi;
  for (int s = 0; s < states; ++s) pi.push_back(dirichlet_row(actions, rng));
  return pi;
}

double estimate_model_epsilon(const ToyMDP& p, const ToyMDP& p_hat) {
  require(p.num_states == p_hat.num_states && p.num_actions == p_hat.num_actions,
          "estimate_model_epsilon: state/action spaces differ");
  double eps = 0;
  for (std::size_t i = 0; i < p.transitions.size(); ++i) {
    eps = std::max(eps, tv_distance(p.transitions[i], p_hat.transitions[i]));
  }
  return eps;
}

double exact_advantage(const ToyMDP& m, const TabularPolicy& pi, int s, int a, int horizon) {
  require(horizon >= 1, "exact_advantage: horizon must be >= 1");
  require(s >= 0 && s < m.num_states && a >= 0 && a < m.num_actions, "exact_advantage: (s, a) out of range");
  require(static_cast<int>(pi.size()) == m.num_states, "exact_advantage: policy size mismatch");
  Vector v = Vector::Zero(m.num_states);  // value with h steps to go
  for (int h = 1; h < horizon; ++h) {
    Vector next(m.num_states);
    for (int st = 0; st < m.num_states; ++st) {
      double acc = 0;
      for (int ac = 0; ac < m.num_actions; ++ac) acc += pi[st][ac] * (m.rewards(st, ac) + m.next(st, ac).dot(v));
      next[st] = acc;
    }
    v = std::move(next);
  }
  return m.rewards(s, a) + m.next(s, a).dot(v);
}

MonteCarloEstimate monte_carlo_advantage(const ToyMDP& m, const TabularPolicy& pi, int s, int a, int horizon,
                                         int rollouts, Rng& rng) {
  require(rollouts >= 2, "monte_carlo_advantage: need at least two rollouts");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto draw = [&](const Vector& p) {
    const double r = u(rng);
    double acc = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (r < acc) return static_cast<int>(i);
    }
    return static_cast<int>(p.size() - 1);
  };
  double sum = 0, sq = 0;
  for (int k = 0; k < rollouts; ++k) {
    int st = s, ac = a;
    double ret = 0;
    for (int t = 0; t < horizon; ++t) {
      ret += m.rewards(st, ac);
      if (t + 1 == horizon) break;
      st = draw(m.next(st, ac));
      ac = draw(pi[st]);
    }
    sum += ret;
    sq += ret * ret;
  }
  MonteCarloEstimate e;
  e.mean = sum / rollouts;
  const double var = std::max(0.0, (sq - rollouts * e.mean * e.mean) / (rollouts - 1));
  e.std_error = std::sqrt(var / rollouts);
  return e;
}

BoundReport check_simulation_bound(const ToyMDP& m, const ToyMDP& m_hat, const std::vector<TabularPolicy>& policies,
                                   const std::vector<int>& horizons) {
  BoundReport rep;
  rep.epsilon = estimate_model_epsilon(m, m_hat);
  rep.reward_bound = std::max(m.reward_bound, m_hat.reward_bound);
  const double dev = (m.rewards - m_hat.rewards).cwiseAbs().maxCoeff();
  for (std::size_t pi = 0; pi < policies.size(); ++pi) {
    for (int k : horizons) {
      const double bound = double(k) * (k - 1) * rep.reward_bound * rep.epsilon + k * dev;
      for (int s = 0; s < m.num_states; ++s) {
        for (int a = 0; a < m.num_actions; ++a) {
          const double gap = std::abs(exact_advantage(m_hat, policies[pi], s, a, k) -
                                      exact_advantage(m, policies[pi], s, a, k));
          ++rep.checked;
          // Round-off allowance for the exact-arithmetic identity.
          const double slack = 1e-12 * (1 + k * rep.reward_bound);
          if (bound > 0) rep.max_ratio = std::max(rep.max_ratio, gap / bound);
          if (gap > bound + slack) {
            ++rep.violations;
            if (!rep.witness) rep.witness = BoundWitness{static_cast<int>(pi), k, s, a, gap, bound};
          }
        }
      }
    }
  }
  return rep;
}

std::pair<ToyMDP, ToyMDP> adversarial_pair(double delta, double rmax) {
  ToyMDP m;
  m.num_states = 2;
  m.num_actions = 1;
  m.reward_bound = rmax;
  m.rewards.resize(2, 1);
  m.rewards << 0.0, rmax;
  m.transitions = {(Vector(2) << 1.0, 0.0).finished(), (Vector(2) << 0.0, 1.0).finished()};
  ToyMDP h = m;
  h.transitions[0] = (Vector(2) << 1.0 - delta, delta).finished();
  return {m, h};
}

std::map<unsigned, double> subset_accuracies(const std::vector<Dataset>& parts, const Dataset& test,
                                             const FLConfig& fl) {
  const int n = static_cast<int>(parts.size());
  require(n >= 1 && n <= 16, "subset_accuracies: between 1 and 16 devices");
  const ModelParams zero = ModelParams::Zero(model_size(test.dim(), test.num_classes));
  std::vector<ModelParams> local;
  for (const auto& p : parts) local.push_back(local_train(zero, p, fl).params);
  double total = 0;
  for (const auto& p : parts) total += static_cast<double>(p.size());
  std::map<unsigned, double> out;
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    std::vector<WeightedModel> w;
    for (int i = 0; i < n; ++i) {
      if (mask & (1u << i)) w.push_back({local[i], static_cast<double>(parts[i].size())});
    }
    out[mask] = evaluate(aggregate(w, fl.aggregation, total), test);
  }
  return out;
}

DecouplingReport check_decoupling(const DecouplingInstance& inst, const DecouplingGrid& grid, double tolerance) {
  const int n = static_cast<int>(inst.profiles.size());
  require(n >= 1 && n <= 6, "check_decoupling: between 1 and 6 devices");
  require(grid.bandwidth_levels >= 3, "check_decoupling: need at least 3 bandwidth levels");
  const SystemConfig& sys = inst.sys;
  const int units = grid.bandwidth_levels - 1;
  const double unit = sys.bandwidth / units;
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // Per-device minimum over the (f, p) grid at every bandwidth level. The
  // round objective depends on (f, p) only through the summed energy and the
  // deadline, so the per-device minimum is exact for the joint grid.
  std::vector<std::vector<double>> table(n, std::vector<double>(units + 1, kInf));
  for (int i = 0; i < n; ++i) {
    for (int c = 1; c <= units; ++c) {
      auto o = brute_force_device_oracle(inst.profiles[i], c * unit, inst.channel.gains[i], sys, grid.fp_grid,
                                         grid.refinements);
      if (o) table[i][c] = o->energy;
    }
  }
  auto objective = [&](unsigned mask, double energy) {
    return round_reward(inst.accuracy.at(mask), energy, sys.sigma);
  };

  DecouplingReport rep;
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    std::vector<int> members;
    for (int i = 0; i < n; ++i) {
      if (mask & (1u << i)) members.push_back(i);
    }
    const int k = static_cast<int>(members.size());

    // Joint: every composition of the bandwidth units into k positive shares.
    double best = -kInf;
    std::function<void(int, int, double)> rec = [&](int idx, int left, double energy) {
      const int dev = members[idx];
      if (idx == k - 1) {
        const double e = energy + table[dev][left];
        if (std::isfinite(e)) best = std::max(best, objective(mask, e));
        return;
      }
      for (int c = 1; c <= left - (k - 1 - idx); ++c) {
        if (std::isfinite(table[dev][c])) rec(idx + 1, left - c, energy + table[dev][c]);
      }
    };
    if (k <= units) rec(0, units, 0.0);
    if (best > -kInf && (!rep.joint_feasible || best > rep.joint_objective)) {
      rep.joint_feasible = true;
      rep.joint_objective = best;
      rep.joint_subset = mask;
    }

    // Decoupled: the tool's energy for this subset, then the objective.
    const ResourceAllocation alloc = optimize_bandwidth(members, inst.profiles, inst.channel, sys);
    if (alloc.feasible) {
      const double r = objective(mask, alloc.totals.energy);
      if (!rep.decoupled_feasible || r > rep.decoupled_objective) {
        rep.decoupled_feasible = true;
        rep.decoupled_objective = r;
        rep.decoupled_subset = mask;
      }
    }
  }
  if (!rep.joint_feasible && !rep.decoupled_feasible) {
    rep.passed = true;
    return rep;
  }
  if (rep.joint_feasible && rep.decoupled_feasible) {
    rep.relative_gap = std::abs(rep.joint_objective - rep.decoupled_objective) / std::abs(rep.decoupled_objective);
    rep.passed = rep.joint_subset == rep.decoupled_subset && rep.relative_gap <= tolerance;
  }
  return rep;
}

std::vector<double> predict_accuracies(const TransitionModel& model, std::span<const TrainSample> samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(model.predict(s.history).accuracy);
  return out;
}

namespace {

struct CellKey {
  int acc, action;
  bool operator<(const CellKey& o) const { return std::tie(acc, action) < std::tie(o.acc, o.action); }
};

int bin_of(double x, int bins) { return std::clamp(static_cast<int>(std::floor(x * bins)), 0, bins - 1); }

struct CellStats {
  std::map<CellKey, std::pair<Vector, Vector>> hist;  // real, predicted
  std::map<CellKey, int> count;
};

CellStats tally(std::span<const TrainSample> samples, std::span<const double> pred, std::span<const std::size_t> idx,
                int n, int bins) {
  CellStats cs;
  for (std::size_t i : idx) {
    const auto& s = samples[i];
    const Vector& x = s.history.back();
    double sel = 0, total = 0;
    for (int d = 0; d < n; ++d) {
      const double size = x[StatState::kPerDevice * d + 4];
      total += size;
      if (x[StatState::kPerDevice * n + 1 + d] > 0.5) sel += size;
    }
    const CellKey key{bin_of(s.prev_accuracy, bins), bin_of(total > 0 ? sel / total : 0.0, bins)};
    auto& h = cs.hist[key];
    if (h.first.size() == 0) {
      h.first = Vector::Zero(bins);
      h.second = Vector::Zero(bins);
    }
    h.first[bin_of(s.target[s.target.size() - 1], bins)] += 1;
    h.second[bin_of(pred[i], bins)] += 1;
    ++cs.count[key];
  }
  return cs;
}

}  // namespace

WorldEpsilonReport empirical_world_epsilon(std::span<const TrainSample> samples, std::span<const double> predicted,
                                           int num_devices, int bins, int min_count, int bootstrap,
                                           std::uint64_t seed) {
  require(samples.size() == predicted.size(), "empirical_world_epsilon: prediction count mismatch");
  require(bins >= 1 && min_count >= 1, "empirical_world_epsilon: invalid binning");
  std::vector<std::size_t> all(samples.size());
  std::iota(all.begin(), all.end(), 0);

  auto summarize = [&](const CellStats& cs, WorldEpsilonReport* rep) {
    double sum = 0, mx = 0;
    int used = 0;
    for (const auto& [key, h] : cs.hist) {
      const int c = cs.count.at(key);
      WorldEpsilonCell cell{key.acc, key.action, c, 0.0};
      if (c < min_count) {
        if (rep) rep->excluded.push_back(cell);
        continue;
      }
      cell.tv = tv_distance(h.first / h.first.sum(), h.second / h.second.sum());
      sum += cell.tv;
      mx = std::max(mx, cell.tv);
      ++used;
      if (rep) rep->cells.push_back(cell);
    }
    if (rep) {
      rep->max_tv = mx;
      rep->mean_tv = used ? sum / used : 0.0;
    }
    return used ? sum / used : 0.0;
  };

  WorldEpsilonReport rep;
  summarize(tally(samples, predicted, all, num_devices, bins), &rep);
  if (bootstrap > 0 && !samples.empty()) {
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
    std::vector<double> means;
    std::vector<std::size_t> idx(samples.size());
    for (int b = 0; b < bootstrap; ++b) {
      for (auto& i : idx) i = pick(rng);
      means.push_back(summarize(tally(samples, predicted, idx, num_devices, bins), nullptr));
    }
    std::sort(means.begin(), means.end());
    rep.ci_low = means[static_cast<std::size_t>(0.025 * (means.size() - 1))];
    rep.ci_high = means[static_cast<std::size_t>(std::ceil(0.975 * (means.size() - 1)))];
  }
  return rep;
}

DeviceProfile random_device_profile(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DeviceProfile p;
  p.f_max = 0.5e9 + 3.5e9 * u(rng);
  p.p_max = std::exp(std::log(1e-3) * (1 - u(rng)));
  p.data_size = std::round(100 + 1900 * u(rng));
  return p;
}

namespace {

double log_uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  return std::exp(u(rng));
}

}  // namespace

SolverOracleReport solver_oracle_suite(int instances, int grid, int refinements, std::uint64_t seed,
                                       double tolerance) {
  Rng rng(seed);
  SystemConfig sys;
  SolverOracleReport rep;
  for (int k = 0; k < instances; ++k) {
    const DeviceProfile p = random_device_profile(rng);
    const double gain = log_uniform(rng, sys.gain_lo, sys.gain_hi);
    const double bw = log_uniform(rng, 1e5, 1e6);
    const auto s = min_device_energy(p, bw, gain, sys);
    const auto o = brute_force_device_oracle(p, bw, gain, sys, grid, refinements);
    ++rep.instances;
    if (bool(s) != bool(o)) {
      ++rep.disagreements;
      continue;
    }
    if (!s) continue;
    ++rep.feasible;
    const double err = std::abs(o->energy - s->energy) / s->energy;
    rep.max_relative_error = std::max(rep.max_relative_error, err);
    if (err > tolerance) ++rep.disagreements;
  }
  return rep;
}

BoundSuiteReport simulation_bound_suite(int tuples, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> states(2, 5), actions(1, 3), horizon(1, 6);
  std::uniform_real_distribution<double> rmax(0.5, 2.0), weight(0.0, 0.5);
  BoundSuiteReport rep;
  for (int i = 0; i < tuples; ++i) {
    const int s = states(rng), a = actions(rng), k = horizon(rng);
    const ToyMDP m = random_mdp(s, a, rmax(rng), rng);
    const ToyMDP h = perturb_mdp(m, weight(rng), rng);
    const TabularPolicy pi = random_policy(s, a, rng);
    const BoundReport r = check_simulation_bound(m, h, {pi}, {k});
    ++rep.tuples;
    rep.ratios.push_back(r.max_ratio);
    rep.max_ratio = std::max(rep.max_ratio, r.max_ratio);
    if (!r.passed()) {
      ++rep.violations;
      if (!rep.witness) rep.witness = r.witness;
    }
  }
  return rep;
}

DecouplingSuiteReport decoupling_suite(int instances, std::uint64_t seed, const DecouplingGrid& grid,
                                       int max_devices) {
  require(max_devices >= 3 && max_devices <= 6, "decoupling_suite: max_devices must be in [3, 6]");
  Rng rng(seed);
  std::uniform_int_distribution<int> count(3, max_devices);
  FLConfig fl;
  const Dataset train = make_blobs(1200, 2, fl.num_classes, 2.5, 1.0, derive_seed(seed, 1));
  const Dataset test = make_blobs(600, 2, fl.num_classes, 2.5, 1.0, derive_seed(seed, 2));
  DecouplingSuiteReport rep;
  for (int i = 0; i < instances; ++i) {
    const int n = count(rng);
    fl.num_devices = n;
    const auto parts = partition_dirichlet(train, n, fl.alpha, rng());
    DecouplingInstance inst;
    for (int d = 0; d < n; ++d) {
      DeviceProfile p = random_device_profile(rng);
      p.data_size = static_cast<double>(parts[d].size());
      inst.profiles.push_back(p);
    }
    inst.channel = sample_channel(rng, n, inst.sys.gain_lo, inst.sys.gain_hi);
    inst.accuracy = subset_accuracies(parts, test, fl);
    rep.reports.push_back(check_decoupling(inst, grid));
    if (!rep.reports.back().passed) ++rep.failures;
  }
  return rep;
}

QosMonotonicityReport qos_monotonicity_suite(int instances, double short_qos, double long_qos, std::uint64_t seed) {
  require(short_qos < long_qos, "qos_monotonicity_suite: deadlines must increase");
  Rng rng(seed);
  SystemConfig lo, hi;
  lo.qos_time = short_qos;
  hi.qos_time = long_qos;
  QosMonotonicityReport rep;
  for (int k = 0; k < instances; ++k) {
    const DeviceProfile p = random_device_profile(rng);
    const double gain = log_uniform(rng, lo.gain_lo, lo.gain_hi);
    const double bw = log_uniform(rng, 1e5, 1e6);
    ++rep.instances;
    const auto a = min_device_energy(p, bw, gain, lo);
    const auto b = min_device_energy(p, bw, gain, hi);
    if (!a) continue;
    ++rep.feasible;
    if (!b || b->energy > a->energy) ++rep.violations;
  }
  return rep;
}

AllocationIndependenceReport allocation_independence_suite(const EnvConfig& cfg, int rounds, std::uint64_t seed) {
  EnvConfig eq = cfg, opt = cfg;
  eq.bandwidth_mode = BandwidthMode::EqualSplit;
  opt.bandwidth_mode = BandwidthMode::Optimized;
  Environment a(eq), b(opt);
  Rng rng(seed);
  AllocationIndependenceReport rep;
  for (std::uint64_t episode = 0; rep.rounds < rounds && episode < 1000; ++episode) {
    a.reset(derive_seed(seed, episode));
    b.reset(derive_seed(seed, episode));
    for (int t = 0; t < cfg.sys.num_rounds && rep.rounds < rounds; ++t) {
      Selection sel(cfg.num_devices());
      std::iota(sel.begin(), sel.end(), 0);
      std::shuffle(sel.begin(), sel.end(), rng);
      sel.resize(cfg.select_count);
      const StepResult ra = a.step(sel), rb = b.step(sel);
      if (ra.feasible != rb.feasible) {
        ++rep.feasibility_mismatches;
        break;
      }
      ++rep.rounds;
      if (std::memcmp(&ra.accuracy, &rb.accuracy, sizeof(double)) != 0) ++rep.accuracy_mismatches;
      const auto& ma = a.global_model();
      const auto& mb = b.global_model();
      if (ma.size() != mb.size() ||
          std::memcmp(ma.data(), mb.data(), sizeof(double) * static_cast<std::size_t>(ma.size())) != 0) {
        ++rep.model_mismatches;
      }
    }
  }
  return rep;
}

}  // namespace wfl
