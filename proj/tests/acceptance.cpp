// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance runner: one PASS/FAIL line per criterion, with timings.
//
//   wflsel_acceptance [--only 1,4] [--expect-fail 9]
//
// Criteria named in --expect-fail are still run and reported as they come
// out. The exit code is 0 when every other criterion passes and every listed
// one fails; a listed criterion that starts passing is reported and makes the
// run fail, so the list cannot go stale.

#include "wfl/experiment.hpp"
#include "wfl/verification.hpp"

#include "test_support.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

using namespace wfl;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string num(double x) {
  std::ostringstream os;
  os.precision(4);
  os << x;
  return os.str();
}

// Full-coordinate central differences; returns ||g - fd|| / max(||g||, ||fd||).
double gradient_error(const std::function<double(const Vector&)>& f, const Vector& theta, const Vector& g) {
  Vector fd(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Vector p = theta, q = theta;
    const double h = 1e-5 * std::max(1.0, std::abs(theta[i]));
    p[i] += h;
    q[i] -= h;
    fd[i] = (f(p) - f(q)) / (p[i] - q[i]);
  }
  const double scale = std::max({g.norm(), fd.norm(), 1e-12});
  return (g - fd).norm() / scale;
}

Vector gaussian(Eigen::Index n, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  Vector v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

Outcome solver_oracle() {
  const auto r = solver_oracle_suite(50, 2001, 2, 1001);
  return {r.passed(), std::to_string(r.instances) + " profiles, " + std::to_string(r.feasible) +
                          " feasible, max relative error " + num(r.max_relative_error)};
}

Outcome decoupling() {
  const auto r = decoupling_suite(20, 1002);
  double gap = 0;
  int same = 0;
  for (const auto& x : r.reports) {
    gap = std::max(gap, x.relative_gap);
    same += x.joint_subset == x.decoupled_subset;
  }
  return {r.passed(), std::to_string(r.reports.size()) + " instances, " + std::to_string(same) +
                          " with the same subset, max relative gap " + num(gap)};
}

Outcome simulation_bound() {
  const auto r = simulation_bound_suite(1000, 1003);
  return {r.passed() && r.tuples == 1000, std::to_string(r.tuples) + " tuples, " + std::to_string(r.violations) +
                                              " violations, max ratio " + num(r.max_ratio)};
}

Outcome gradients() {
  constexpr int kPoints = 100;
  constexpr double kLimit = 1e-4;
  Rng rng(1004);
  std::vector<std::pair<std::string, double>> worst;

  {  // tanh network, loss = sum(c * output)
    const Mlp<double> mlp({4, 6, 5, 3});
    double w = 0;
    for (int k = 0; k < kPoints; ++k) {
      const Vector theta = gaussian(mlp.num_params(), rng, 0.7);
      const Matrix x = Matrix::Random(4, 3), c = Matrix::Random(3, 3);
      auto f = [&](const Vector& p) { return (mlp.forward(p, x).array() * c.array()).sum(); };
      typename Mlp<double>::Cache cache;
      mlp.forward(theta, x, &cache);
      Vector g = Vector::Zero(theta.size());
      mlp.backward(theta, cache, c, g);
      w = std::max(w, gradient_error(f, theta, g));
    }
    worst.emplace_back("mlp", w);
  }
  {  // learner cross-entropy
    const Dataset data = make_blobs(40, 3, 4, 2.0, 1.0, 5);
    double w = 0;
    for (int k = 0; k < kPoints; ++k) {
      const Vector theta = gaussian(model_size(3, 4), rng);
      auto f = [&](const Vector& p) { return loss_only(p, data); };
      w = std::max(w, gradient_error(f, theta, loss_and_grad(theta, data).grad));
    }
    worst.emplace_back("fl-loss", w);
  }
  Environment env(testing::tiny_env(4, 2, 3));
  const auto trajs = collect_trajectories(env, random_behavior(4, 2), 4, 6);
  {  // world-model loss
    const auto samples = build_samples(trajs, 4, 2);
    std::vector<const TrainSample*> ptrs;
    for (const auto& s : samples) ptrs.push_back(&s);
    TransitionModel model(4, 2, {6});
    Matrix in(model.step_dim(), samples.size()), out(model.target_dim(), samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      in.col(i) = samples[i].history.back();
      out.col(i) = samples[i].target;
    }
    model.in_norm = Normalizer::fit(in);
    model.out_norm = Normalizer::fit(out);
    double w = 0;
    for (int k = 0; k < kPoints; ++k) {
      const Vector theta = model.net().init(rng);
      auto f = [&](const Vector& p) { return world_loss(model, p, ptrs, nullptr); };
      Vector g;
      world_loss(model, theta, ptrs, &g);
      w = std::max(w, gradient_error(f, theta, g));
    }
    worst.emplace_back("world-loss", w);
  }
  PolicyNet policy(4, 2, {6});
  {
    std::vector<Vector> enc;
    Environment e(testing::tiny_env(4, 2, 3));
    for (std::uint64_t s = 0; s < 4; ++s) enc.push_back(encode_observation(e.reset(s)));
    policy.fit_normalizer(enc);
  }
  {  // policy log-probability
    double w = 0;
    for (int k = 0; k < kPoints; ++k) {
      const Vector theta = policy.init(rng) * 100.0;
      const Observation obs = env.reset(k);
      const Selection sel = select_random(4, 2, rng);
      auto f = [&](const Vector& p) { return logprob(policy, p, obs, sel); };
      Vector g = Vector::Zero(theta.size());
      logprob(policy, theta, obs, sel, &g);
      w = std::max(w, gradient_error(f, theta, g));
    }
    worst.emplace_back("policy-logprob", w);
  }
  {  // clipped group-relative objective
    double w = 0;
    std::uniform_real_distribution<double> shift(-0.4, 0.4);
    const double clip = 0.2;
    for (int k = 0; k < kPoints; ++k) {
      const Vector theta = policy.init(rng) * 100.0;
      EpisodeBatch batch = collect_batch(policy, theta, env, 3, derive_seed(1004, k));
      // Move the behaviour log-probabilities so some ratios fall outside the
      // clip range; keep every ratio away from the kinks.
      for (auto& ep : batch) {
        for (auto& s : ep.steps) {
          const double lp = s.old_logprob;
          for (;;) {
            const double rho = std::exp(-(s.old_logprob = lp + shift(rng)) + lp);
            if (std::abs(rho - (1 - clip)) > 1e-3 && std::abs(rho - (1 + clip)) > 1e-3) break;
          }
        }
      }
      const Matrix adv = advantages(normalize_rewards(reward_matrix(batch) + Matrix::Random(3, 3)), 1.0);
      auto f = [&](const Vector& p) { return grpo_objective(policy, p, batch, adv, clip).value; };
      Vector g;
      grpo_objective(policy, theta, batch, adv, clip, &g);
      w = std::max(w, gradient_error(f, theta, g));
    }
    worst.emplace_back("grpo-objective", w);
  }
  {  // value head
    const Mlp<double> head = make_value_head(policy, {8});
    double w = 0;
    for (int k = 0; k < kPoints; ++k) {
      const Vector theta = head.init(rng);
      const Matrix obs = Matrix::Random(policy.obs_dim(), 6);
      const Vector target = gaussian(6, rng);
      auto f = [&](const Vector& p) { return value_loss(head, p, obs, target); };
      Vector g;
      value_loss(head, theta, obs, target, &g);
      w = std::max(w, gradient_error(f, theta, g));
    }
    worst.emplace_back("value-head", w);
  }

  Outcome o{true, ""};
  for (const auto& [name, w] : worst) {
    o.passed = o.passed && w < kLimit;
    o.detail += (o.detail.empty() ? "" : ", ") + name + " " + num(w);
  }
  o.detail = "max relative error over " + std::to_string(kPoints) + " points: " + o.detail;
  return o;
}

// Shared by the world-model and end-to-end criteria.
struct Pipeline {
  ExperimentConfig cfg = make_preset("desk-small");
  EnvConfig env = make_env_config(cfg);
  std::vector<Trajectory> trajs;
  TrainedWorld world;
  double world_seconds = 0;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome world_fidelity(Pipeline& p) {
  const auto t0 = std::chrono::steady_clock::now();
  Environment real(p.env);
  p.trajs = collect_parallel(real, random_behavior(p.cfg.fl.num_devices, p.cfg.select_count), p.cfg.trajectories,
                             stage_seed(p.cfg, Stage::Collect), p.cfg.fingerprint());
  p.world = train_world(p.cfg, p.trajs);
  p.world_seconds = seconds_since(t0);
  std::vector<Trajectory> held;
  for (int j : p.world.report.heldout_trajectories) held.push_back(p.trajs[j]);
  VirtualEnvironment venv(p.env, p.world.model);
  const ReplayReport replay = replay_rewards(venv, held);
  const auto& r = p.world.report;
  const bool ok = r.heldout_accuracy_mse < r.persistence_accuracy_mse && replay.mean_reward_error < 0.05 &&
                  p.world_seconds < 300;
  return {ok, std::to_string(p.trajs.size()) + " trajectories; held-out accuracy MSE " + num(r.heldout_accuracy_mse) +
                  " vs persistence " + num(r.persistence_accuracy_mse) + "; replay reward error " +
                  num(replay.mean_reward_error) + " over " + std::to_string(held.size()) +
                  " held-out episodes; collect+train " + num(p.world_seconds) + " s"};
}

Outcome end_to_end(Pipeline& p) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!p.world.model) world_fidelity(p);
  VirtualEnvironment venv(p.env, p.world.model);
  const TrainedPolicy trained = train_policy(p.cfg, venv);
  const auto params = std::make_shared<const Vector>(trained.result.params);
  const int trials = p.cfg.eval.trials;
  const std::uint64_t seed = stage_seed(p.cfg, Stage::Eval);
  const auto pol = cwpems(evaluate_trials(p.env, policy_behavior(trained.policy, params), trials, seed, ""));
  const auto rnd = cwpems(
      evaluate_trials(p.env, random_behavior(p.cfg.fl.num_devices, p.cfg.select_count), trials, seed, ""));
  const auto grd = cwpems(evaluate_trials(p.env, greedy_behavior(p.env, p.cfg.eval.greedy_epsilon), trials, seed, ""));
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  const double mp = mean(pol), mr = mean(rnd), mg = mean(grd);
  const double pv = paired_t_pvalue_greater(pol, rnd);
  const double total = seconds_since(t0) + p.world_seconds;
  const bool ok = trials == 10 && mp >= 1.10 * mr && mp >= mg && pv < 0.05 && total < 1800;
  return {ok, std::to_string(trials) + " trials; mean CWPEM policy " + num(mp) + ", random " + num(mr) + " (x" +
                  num(mp / mr) + "), greedy " + num(mg) + " (x" + num(mp / mg) + "); paired p " + num(pv) +
                  "; pipeline " + num(total) + " s"};
}

Outcome qos_monotonicity() {
  const auto r = qos_monotonicity_suite(200, 15.0, 20.0, 1007);
  return {r.passed() && r.instances == 200, std::to_string(r.instances) + " instances, " + std::to_string(r.feasible) +
                                                " feasible, " + std::to_string(r.violations) + " violations"};
}

Outcome allocation_independence() {
  EnvConfig env = make_env_config(make_preset("desk-small"));
  env.sys.qos_time = 1e3;  // every selection trains under both modes
  const auto r = allocation_independence_suite(env, 20, 1008);
  return {r.passed() && r.rounds == 20 && r.feasibility_mismatches == 0,
          std::to_string(r.rounds) + " rounds, " + std::to_string(r.accuracy_mismatches) + " accuracy, " +
              std::to_string(r.model_mismatches) + " model, " + std::to_string(r.feasibility_mismatches) +
              " feasibility mismatches"};
}

Outcome robustness() {
  constexpr int kSeeds = 5;
  ExperimentConfig base = make_preset("desk-small");
  base.sys.qos_time = 1e3;  // every round trains, so only the update perturbation differs
  auto final_accuracy = [&](const ExperimentConfig& c) {
    const EnvConfig env = make_env_config(c);
    const auto trials = evaluate_trials(env, random_behavior(c.fl.num_devices, c.select_count), kSeeds, 1009, "");
    double s = 0;
    for (const auto& t : trials) s += t.rounds.back().accuracy;
    return s / kSeeds;
  };
  const double clean = final_accuracy(base);
  std::vector<std::pair<int, double>> quant;
  for (int bits : {2, 4, 8, 32}) {
    ExperimentConfig c = base;
    c.quant_bits = bits;
    quant.emplace_back(bits, final_accuracy(c));
  }
  ExperimentConfig d = base;
  d.dp_epsilon = 1.0;
  d.dp_delta = 1e-5;
  const double dp = final_accuracy(d);
  bool monotone = true;
  for (std::size_t i = 1; i < quant.size(); ++i) monotone = monotone && quant[i].second >= quant[i - 1].second;
  const bool q2 = quant[0].second >= 0.8 * clean, dp_ok = dp >= 0.8 * clean;
  std::string detail = "unperturbed " + num(clean) + "; bits";
  for (const auto& [b, a] : quant) detail += " " + std::to_string(b) + ":" + num(a);
  detail += std::string(monotone ? " (monotone)" : " (not monotone)") + "; 2-bit ratio " +
            num(quant[0].second / clean) + (q2 ? "" : " < 0.8") + "; DP ratio " + num(dp / clean) +
            (dp_ok ? "" : " < 0.8") + "; " + std::to_string(kSeeds) + " seeds";
  return {q2 && dp_ok && monotone, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only, expect_fail;
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--expect-fail", expect_fail, "Criteria known to fail")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const std::set<int> run(only.begin(), only.end()), xfail(expect_fail.begin(), expect_fail.end());

  Pipeline pipeline;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"solver-oracle (< 30 s)", solver_oracle},
      {"decoupling (< 120 s)", decoupling},
      {"simulation-bound (< 60 s)", simulation_bound},
      {"gradients", gradients},
      {"world-model-fidelity", [&] { return world_fidelity(pipeline); }},
      {"end-to-end", [&] { return end_to_end(pipeline); }},
      {"qos-monotonicity", qos_monotonicity},
      {"allocation-independence", allocation_independence},
      {"robustness", robustness},
  };
  const double limits[] = {30, 120, 60, 0, 0, 0, 0, 0, 0};

  bool ok = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!run.empty() && !run.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    if (limits[i] > 0 && secs >= limits[i]) {
      o.passed = false;
      o.detail += "; over the time limit";
    }
    const bool expected = xfail.count(id) > 0;
    std::string note;
    if (expected) note = o.passed ? " [listed as expected failure but passed]" : " [expected failure]";
    std::printf("%s %d %s: %s (%.1f s)%s\n", o.passed ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str(), secs, note.c_str());
    std::fflush(stdout);
    ok = ok && (o.passed != expected);
  }
  return ok ? 0 : 1;
}
