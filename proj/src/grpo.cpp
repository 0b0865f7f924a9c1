// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0

#include "wfl/grpo.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

namespace wfl {

void TrainConfig::validate() const {
  require(batch >= 2, "TrainConfig: batch must be >= 2");
  require(iterations >= 1, "TrainConfig: iterations must be >= 1");
  require(clip > 0 && clip < 1, "TrainConfig: clip must be in (0, 1)");
  require(epochs >= 1, "TrainConfig: epochs must be >= 1");
  require(learning_rate > 0, "TrainConfig: learning_rate must be positive");
  require(gamma > 0 && gamma <= 1, "TrainConfig: gamma must be in (0, 1]");
  require(std_floor > 0, "TrainConfig: std_floor must be positive");
}

Matrix reward_matrix(const EpisodeBatch& batch) {
  require(!batch.empty(), "reward_matrix: empty batch");
  const std::size_t k = batch.front().steps.size();
  Matrix r(batch.size(), k);
  for (std::size_t e = 0; e < batch.size(); ++e) {
    require(batch[e].steps.size() == k, "reward_matrix: episodes differ in length");
    for (std::size_t t = 0; t < k; ++t) r(e, t) = batch[e].steps[t].reward;
  }
  return r;
}

Matrix normalize_rewards(const Matrix& rewards, double std_floor) {
  require(rewards.rows() >= 2, "normalize_rewards: need at least two episodes");
  Matrix out(rewards.rows(), rewards.cols());
  for (Eigen::Index t = 0; t < rewards.cols(); ++t) {
    const double mean = rewards.col(t).mean();
    const double sd = std::sqrt((rewards.col(t).array() - mean).square().mean());
    out.col(t) = (rewards.col(t).array() - mean) / (sd + std_floor);
  }
  return out;
}

Matrix advantages(const Matrix& normalized, double gamma) {
  Matrix a(normalized.rows(), normalized.cols());
  for (Eigen::Index t = normalized.cols(); t-- > 0;) {
    a.col(t) = normalized.col(t);
    if (t + 1 < normalized.cols()) a.col(t) += gamma * a.col(t + 1);
  }
  return a;
}

ObjectiveValue grpo_objective(const PolicyNet& policy, const Vector& params, const EpisodeBatch& batch,
                              const Matrix& adv, double clip, Vector* grad) {
  require(adv.rows() == static_cast<Eigen::Index>(batch.size()), "grpo_objective: advantage shape mismatch");
  if (grad) grad->setZero(params.size());
  ObjectiveValue out;
  double count = 0;
  for (std::size_t e = 0; e < batch.size(); ++e) count += batch[e].steps.size();
  require(count > 0, "grpo_objective: empty batch");
  Vector scratch;
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const auto& steps = batch[e].steps;
    require(adv.cols() == static_cast<Eigen::Index>(steps.size()), "grpo_objective: advantage shape mismatch");
    for (std::size_t t = 0; t < steps.size(); ++t) {
      const auto& s = steps[t];
      const double a = adv(e, t);
      if (grad) scratch.setZero(params.size());
      const double lp = logprob_encoded(policy, params, s.obs, s.selection, grad ? &scratch : nullptr);
      const double rho = std::exp(lp - s.old_logprob);
      if (!std::isfinite(rho)) {
        std::ostringstream os;
        os << "grpo_objective: non-finite ratio at episode " << e << ", round " << t << " (logprob " << lp
           << ", old " << s.old_logprob << ")";
        throw NumericError(os.str());
      }
      const double clipped = std::clamp(rho, 1 - clip, 1 + clip);
      const double unclipped_term = rho * a, clipped_term = clipped * a;
      out.value += std::min(unclipped_term, clipped_term);
      const bool active = unclipped_term <= clipped_term;
      if (!active) out.clip_fraction += 1;
      out.approx_kl += (rho - 1) - (lp - s.old_logprob);
      if (grad && active) *grad += (rho * a / count) * scratch;
    }
  }
  out.value /= count;
  out.clip_fraction /= count;
  out.approx_kl /= count;
  return out;
}

EpisodeBatch collect_batch(const PolicyNet& policy, const Vector& params, EnvironmentBase& env,
                           int count, std::uint64_t seed) {
  EpisodeBatch batch(count);
  for (int e = 0; e < count; ++e) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(e) + 1'000'000));
    Observation obs = env.reset(derive_seed(seed, static_cast<std::uint64_t>(e)));
    for (bool done = false; !done;) {
      EpisodeStep step;
      step.obs = policy.normalize(encode_observation(obs));
      SampledAction a = sample_action(policy, params, obs, env.select_count(), rng);
      StepResult r = env.step(a.selection);
      step.selection = std::move(a.selection);
      step.old_logprob = a.logprob;
      step.reward = r.reward;
      batch[e].cwpem += r.reward;
      batch[e].steps.push_back(std::move(step));
      done = r.done;
      obs = std::move(r.next);
    }
  }
  return batch;
}

void fit_policy_normalizer(PolicyNet& policy, EnvironmentBase& env, int episodes, std::uint64_t seed) {
  std::vector<Vector> encoded;
  for (int e = 0; e < episodes; ++e) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(e) + 1'000'000));
    Observation obs = env.reset(derive_seed(seed, static_cast<std::uint64_t>(e)));
    for (bool done = false; !done;) {
      encoded.push_back(encode_observation(obs));
      StepResult r = env.step(select_random(env.num_devices(), env.select_count(), rng));
      done = r.done;
      obs = std::move(r.next);
    }
  }
  policy.fit_normalizer(encoded);
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void fill_batch_metrics(const EpisodeBatch& batch, IterationMetrics& m) {
  double reward = 0, steps = 0;
  for (const auto& ep : batch) {
    m.mean_cwpem += ep.cwpem;
    for (const auto& s : ep.steps) reward += s.reward;
    steps += ep.steps.size();
  }
  m.mean_cwpem /= batch.size();
  m.mean_reward = reward / steps;
}

}  // namespace

TrainResult train_grpo(const PolicyNet& policy, Vector params, EnvironmentBase& env, const TrainConfig& cfg,
                       const IterationCallback& on_iteration) {
  cfg.validate();
  require(params.size() == policy.net().num_params(), "train_grpo: parameter size mismatch");
  TrainResult res;
  Adam adam(params.size(), cfg.learning_rate);
  const auto t0 = std::chrono::steady_clock::now();
  Vector grad;
  for (int it = 0; it < cfg.iterations; ++it) {
    const EpisodeBatch batch = collect_batch(policy, params, env, cfg.batch, derive_seed(cfg.seed, it));
    const Matrix adv = advantages(normalize_rewards(reward_matrix(batch), cfg.std_floor), cfg.gamma);
    IterationMetrics m;
    m.iteration = it;
    fill_batch_metrics(batch, m);
    for (int ep = 0; ep < cfg.epochs; ++ep) {
      const ObjectiveValue j = grpo_objective(policy, params, batch, adv, cfg.clip, &grad);
      m.clip_fraction += j.clip_fraction / cfg.epochs;
      const Vector descent = -grad;
      adam.step(params, descent);
    }
    m.approx_kl = grpo_objective(policy, params, batch, adv, cfg.clip).approx_kl;
    m.wall_time_s = seconds_since(t0);
    res.metrics.push_back(m);
    if (on_iteration) on_iteration(m, params);
  }
  res.params = std::move(params);
  return res;
}

Mlp<double> make_value_head(const PolicyNet& policy, std::vector<int> hidden) {
  std::vector<int> sizes{policy.obs_dim()};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  return Mlp<double>(sizes);
}

double value_loss(const Mlp<double>& head, const Vector& params, const Matrix& obs, const Vector& targets,
                  Vector* grad) {
  require(obs.cols() == targets.size() && targets.size() > 0, "value_loss: target count mismatch");
  typename Mlp<double>::Cache cache;
  const Matrix err = head.forward(params, obs, grad ? &cache : nullptr) - targets.transpose();
  const double n = static_cast<double>(targets.size());
  if (grad) {
    grad->setZero(params.size());
    head.backward(params, cache, 2.0 * err / n, *grad);
  }
  return err.squaredNorm() / n;
}

Matrix discounted_returns(const Matrix& rewards, double gamma) { return advantages(rewards, gamma); }

Matrix ppo_advantages(const Matrix& rewards, const Matrix& values, double gamma) {
  require(rewards.rows() == values.rows() && rewards.cols() == values.cols(), "ppo_advantages: shape mismatch");
  return discounted_returns(rewards, gamma) - values;
}

TrainResult train_ppo(const PolicyNet& policy, Vector params, const Mlp<double>& value_head, Vector value_params,
                      EnvironmentBase& env, const TrainConfig& cfg, const IterationCallback& on_iteration) {
  cfg.validate();
  require(value_params.size() == value_head.num_params(), "train_ppo: value parameter size mismatch");
  TrainResult res;
  Adam adam(params.size(), cfg.learning_rate);
  Adam vadam(value_params.size(), 10 * cfg.learning_rate);
  const auto t0 = std::chrono::steady_clock::now();
  Vector grad, vgrad;
  for (int it = 0; it < cfg.iterations; ++it) {
    const EpisodeBatch batch = collect_batch(policy, params, env, cfg.batch, derive_seed(cfg.seed, it));
    const Matrix rewards = reward_matrix(batch);
    const Eigen::Index k = rewards.cols();
    Matrix obs(policy.obs_dim(), rewards.size());
    for (Eigen::Index e = 0; e < rewards.rows(); ++e) {
      for (Eigen::Index t = 0; t < k; ++t) obs.col(e * k + t) = batch[e].steps[t].obs;
    }
    const Matrix returns = discounted_returns(rewards, cfg.gamma);
    Matrix values(rewards.rows(), k);
    const Matrix v = value_head.forward(value_params, obs);
    for (Eigen::Index e = 0; e < rewards.rows(); ++e) values.row(e) = v.block(0, e * k, 1, k);
    const Matrix adv = ppo_advantages(rewards, values, cfg.gamma);

    IterationMetrics m;
    m.iteration = it;
    fill_batch_metrics(batch, m);
    Vector target(rewards.size());
    for (Eigen::Index e = 0; e < rewards.rows(); ++e) target.segment(e * k, k) = returns.row(e).transpose();
    for (int ep = 0; ep < cfg.epochs; ++ep) {
      const ObjectiveValue j = grpo_objective(policy, params, batch, adv, cfg.clip, &grad);
      m.clip_fraction += j.clip_fraction / cfg.epochs;
      const Vector descent = -grad;
      adam.step(params, descent);

      value_loss(value_head, value_params, obs, target, &vgrad);
      vadam.step(value_params, vgrad);
    }
    m.value_mse = value_loss(value_head, value_params, obs, target);
    m.approx_kl = grpo_objective(policy, params, batch, adv, cfg.clip).approx_kl;
    m.wall_time_s = seconds_since(t0);
    res.metrics.push_back(m);
    if (on_iteration) on_iteration(m, params);
  }
  res.params = std::move(params);
  res.value_params = std::move(value_params);
  return res;
}

void write_metrics_csv(const std::string& path, const std::vector<IterationMetrics>& metrics,
                       const std::string& fingerprint, std::uint64_t seed, bool include_value) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_metrics_csv: cannot open " + path);
  f.imbue(std::locale::classic());
  f.precision(10);
  f << "# fingerprint=" << fingerprint << " seed=" << seed << "\n";
  f << "iteration,mean_reward,mean_cwpem,clip_fraction,approx_kl,wall_time_s" << (include_value ? ",value_mse" : "")
    << "\n";
  for (const auto& m : metrics) {
    f << m.iteration << ',' << m.mean_reward << ',' << m.mean_cwpem << ',' << m.clip_fraction << ','
      << m.approx_kl << ',' << m.wall_time_s;
    if (include_value) f << ',' << m.value_mse;
    f << "\n";
  }
}

}  // namespace wfl
