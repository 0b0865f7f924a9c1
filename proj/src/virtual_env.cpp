// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0

#include "wfl/virtual_env.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace wfl {

Normalizer Normalizer::fit(const Matrix& columns, double floor) {
  require(columns.cols() > 0, "Normalizer::fit: no samples");
  Normalizer n;
  n.mean = columns.rowwise().mean();
  n.scale = ((columns.colwise() - n.mean).array().square().rowwise().mean()).sqrt().matrix();
  for (Eigen::Index i = 0; i < n.scale.size(); ++i) {
    if (!(n.scale[i] > floor)) n.scale[i] = 1.0;
  }
  return n;
}

Vector step_input(const Vector& flat_stats, std::span<const int> selection, int num_devices) {
  require(flat_stats.size() == StatState::kPerDevice * num_devices + 1, "step_input: stats size mismatch");
  Vector x = Vector::Zero(flat_stats.size() + num_devices);
  x.head(flat_stats.size()) = flat_stats;
  for (int n : selection) {
    require(n >= 0 && n < num_devices, "step_input: device index out of range");
    x[flat_stats.size() + n] = 1.0;
  }
  return x;
}

namespace {

constexpr int kTargetPerDevice = 4;

Vector target_from(const Vector& next_stats, double accuracy, int n) {
  Vector t(kTargetPerDevice * n + 1);
  for (int i = 0; i < n; ++i) t.segment(kTargetPerDevice * i, kTargetPerDevice) = next_stats.segment(StatState::kPerDevice * i, kTargetPerDevice);
  t[kTargetPerDevice * n] = accuracy;
  return t;
}

}  // namespace

std::vector<TrainSample> build_samples(std::span<const Trajectory> trajs, int num_devices, int window) {
  require(window >= 1, "build_samples: window must be >= 1");
  std::vector<TrainSample> out;
  for (std::size_t j = 0; j < trajs.size(); ++j) {
    std::vector<Vector> hist;
    for (const auto& r : trajs[j].rounds) {
      if (!r.feasible) continue;
      hist.push_back(step_input(r.stats, r.selection, num_devices));
      if (static_cast<int>(hist.size()) > window) hist.erase(hist.begin());
      TrainSample s;
      s.history = hist;
      s.target = target_from(r.next_stats, r.accuracy, num_devices);
      s.prev_accuracy = r.stats[StatState::kPerDevice * num_devices];
      s.trajectory = static_cast<int>(j);
      out.push_back(std::move(s));
    }
  }
  return out;
}

TransitionModel::TransitionModel(int num_devices, int window, std::vector<int> hidden)
    : num_devices_(num_devices), window_(window), hidden_(std::move(hidden)) {
  require(num_devices >= 1 && window >= 1, "TransitionModel: invalid dimensions");
  std::vector<int> sizes{window_ * step_dim()};
  sizes.insert(sizes.end(), hidden_.begin(), hidden_.end());
  sizes.push_back(target_dim());
  net_ = Mlp<double>(sizes);
  params = Vector::Zero(net_.num_params());
  in_norm = {Vector::Zero(step_dim()), Vector::Ones(step_dim())};
  out_norm = {Vector::Zero(target_dim()), Vector::Ones(target_dim())};
}

Vector TransitionModel::encode(std::span<const Vector> history) const {
  require(!history.empty(), "TransitionModel: empty history");
  const int d = step_dim();
  Vector x = Vector::Zero(window_ * d);
  const int k = std::min<int>(window_, static_cast<int>(history.size()));
  for (int i = 0; i < k; ++i) {
    const Vector& h = history[history.size() - k + i];
    require(h.size() == d, "TransitionModel: step input dimension mismatch");
    x.segment((window_ - k + i) * d, d) = in_norm.normalize(h);
  }
  return x;
}

WorldPrediction TransitionModel::predict(std::span<const Vector> history) const {
  const Vector y = out_norm.denormalize(net_.forward(params, encode(history)));
  const int n = num_devices_;
  const Vector& last = history.back();
  WorldPrediction p;
  p.accuracy = std::clamp(y[kTargetPerDevice * n], 0.0, 1.0);
  p.next_stats.resize(StatState::kPerDevice * n + 1);
  for (int i = 0; i < n; ++i) {
    const bool sel = last[StatState::kPerDevice * n + 1 + i] > 0.5;
    const double* t = y.data() + kTargetPerDevice * i;
    p.next_stats.segment(StatState::kPerDevice * i, StatState::kPerDevice)
        << std::max(t[0], 0.0), sel ? std::max(t[1], 0.0) : 0.0, sel ? t[2] : 0.0,
        sel ? std::clamp(t[3], 0.0, 1.0) : 0.0, last[StatState::kPerDevice * i + 4];
  }
  p.next_stats[StatState::kPerDevice * n] = p.accuracy;
  return p;
}

namespace {

void write_vec(std::ostream& os, const char* key, const Vector& v) {
  os << key;
  for (double x : v) os << ' ' << x;
  os << '\n';
}

Vector read_vec(std::istream& is, const std::string& key, int n) {
  std::string k;
  is >> k;
  require(k == key, "TransitionModel::load: expected " + key + ", found " + k);
  Vector v(n);
  for (auto& x : v) is >> x;
  require(bool(is), "TransitionModel::load: truncated " + key);
  return v;
}

}  // namespace

void TransitionModel::save(const std::string& path, const std::string& fingerprint) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("TransitionModel::save: cannot open " + path);
  f.imbue(std::locale::classic());
  f.precision(17);
  f << "wflsel-world-model 1\nfingerprint " << (fingerprint.empty() ? "-" : fingerprint) << "\n"
    << "devices " << num_devices_ << "\nwindow " << window_ << "\nhidden " << hidden_.size();
  for (int h : hidden_) f << ' ' << h;
  f << "\nparams " << params.size() << '\n';
  write_vec(f, "in_mean", in_norm.mean);
  write_vec(f, "in_scale", in_norm.scale);
  write_vec(f, "out_mean", out_norm.mean);
  write_vec(f, "out_scale", out_norm.scale);
  f << "end_header\n";
  f.write(reinterpret_cast<const char*>(params.data()), static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!f) throw std::runtime_error("TransitionModel::save: write failed for " + path);
}

TransitionModel TransitionModel::load(const std::string& path, std::string* fingerprint) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("TransitionModel::load: cannot open " + path);
  f.imbue(std::locale::classic());
  std::string magic, key;
  int version = 0, devices = 0, window = 0, nh = 0;
  Eigen::Index np = 0;
  f >> magic >> version;
  require(magic == "wflsel-world-model" && version == 1, "TransitionModel::load: not a world model file");
  std::string fp;
  f >> key >> fp;
  require(key == "fingerprint", "TransitionModel::load: missing fingerprint");
  if (fingerprint) *fingerprint = fp == "-" ? "" : fp;
  f >> key >> devices >> key >> window >> key >> nh;
  std::vector<int> hidden(nh);
  for (auto& h : hidden) f >> h;
  f >> key >> np;
  TransitionModel m(devices, window, hidden);
  require(np == m.params.size(), "TransitionModel::load: parameter count mismatch");
  m.in_norm.mean = read_vec(f, "in_mean", m.step_dim());
  m.in_norm.scale = read_vec(f, "in_scale", m.step_dim());
  m.out_norm.mean = read_vec(f, "out_mean", m.target_dim());
  m.out_norm.scale = read_vec(f, "out_scale", m.target_dim());
  f >> key;
  require(key == "end_header", "TransitionModel::load: missing end_header");
  f.get();
  f.read(reinterpret_cast<char*>(m.params.data()), static_cast<std::streamsize>(np * sizeof(double)));
  require(bool(f), "TransitionModel::load: truncated parameters");
  return m;
}

double world_loss(const TransitionModel& model, const Vector& params,
                  std::span<const TrainSample* const> samples, Vector* grad) {
  require(!samples.empty(), "world_loss: no samples");
  std::map<int, int> per_traj;
  for (const auto* s : samples) ++per_traj[s->trajectory];
  const double trajs = static_cast<double>(per_traj.size());
  const Eigen::Index n = static_cast<Eigen::Index>(samples.size());
  const int d_in = model.window() * model.step_dim(), d_out = model.target_dim();
  Matrix x(d_in, n), y(d_out, n);
  Vector w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.col(i) = model.encode(samples[i]->history);
    y.col(i) = model.encode_target(samples[i]->target);
    w[i] = 1.0 / (per_traj[samples[i]->trajectory] * trajs * d_out);
  }
  typename Mlp<double>::Cache cache;
  const Matrix out = model.net().forward(params, x, grad ? &cache : nullptr);
  const Matrix err = out - y;
  const double loss = (err.colwise().squaredNorm().transpose().array() * w.array()).sum();
  if (grad) {
    grad->setZero(params.size());
    const Matrix up = 2.0 * err * w.asDiagonal();
    model.net().backward(params, cache, up, *grad);
  }
  return loss;
}

TransitionModel train_world_model(std::span<const Trajectory> trajs, int num_devices,
                                  const WorldModelConfig& cfg, WorldTrainReport* report) {
  require(!trajs.empty(), "train_world_model: no trajectories");
  require(cfg.epochs >= 1 && cfg.batch >= 1 && cfg.learning_rate > 0, "train_world_model: invalid config");
  Rng rng(cfg.seed);
  std::vector<int> order(trajs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_hold = 0;
  if (trajs.size() >= 2) {
    n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.holdout * trajs.size())));
  }
  std::vector<int> hold(order.end() - n_hold, order.end());
  std::vector<int> train(order.begin(), order.end() - n_hold);
  std::sort(hold.begin(), hold.end());
  std::sort(train.begin(), train.end());

  const std::vector<TrainSample> samples = build_samples(trajs, num_devices, cfg.window);
  std::vector<const TrainSample*> train_s, hold_s;
  std::vector<std::vector<const TrainSample*>> by_traj(trajs.size());
  std::vector<bool> is_hold(trajs.size(), false);
  for (int h : hold) is_hold[h] = true;
  for (const auto& s : samples) {
    (is_hold[s.trajectory] ? hold_s : train_s).push_back(&s);
    by_traj[s.trajectory].push_back(&s);
  }
  require(!train_s.empty(), "train_world_model: no feasible training rounds");

  TransitionModel model(num_devices, cfg.window, cfg.hidden);
  Matrix in(model.step_dim(), train_s.size()), tg(model.target_dim(), train_s.size());
  for (std::size_t i = 0; i < train_s.size(); ++i) {
    in.col(i) = train_s[i]->history.back();
    tg.col(i) = train_s[i]->target;
  }
  model.in_norm = Normalizer::fit(in);
  model.out_norm = Normalizer::fit(tg);
  model.params = model.net().init(rng, 0.1);

  Adam adam(model.params.size(), cfg.learning_rate);
  std::vector<int> active;
  for (int t : train) {
    if (!by_traj[t].empty()) active.push_back(t);
  }
  WorldTrainReport rep;
  rep.train_trajectories = train;
  rep.heldout_trajectories = hold;
  Vector grad;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(active.begin(), active.end(), rng);
    for (std::size_t b = 0; b < active.size(); b += cfg.batch) {
      std::vector<const TrainSample*> batch;
      for (std::size_t k = b; k < std::min(active.size(), b + cfg.batch); ++k) {
        batch.insert(batch.end(), by_traj[active[k]].begin(), by_traj[active[k]].end());
      }
      const double loss = world_loss(model, model.params, batch, &grad);
      if (!std::isfinite(loss) || !grad.allFinite()) {
        std::ostringstream os;
        os << "train_world_model: non-finite loss at epoch " << epoch << ", batch starting at trajectory "
           << active[b] << " (loss " << loss << ")";
        throw NumericError(os.str());
      }
      adam.step(model.params, grad);
    }
    rep.train_mse.push_back(world_loss(model, model.params, train_s, nullptr));
    rep.heldout_mse.push_back(hold_s.empty() ? 0.0 : world_loss(model, model.params, hold_s, nullptr));
  }
  const int acc = model.target_dim() - 1;
  for (const auto* s : hold_s) {
    const double truth = s->target[acc];
    rep.heldout_accuracy_mse += std::pow(model.predict(s->history).accuracy - truth, 2);
    rep.persistence_accuracy_mse += std::pow(s->prev_accuracy - truth, 2);
  }
  if (!hold_s.empty()) {
    rep.heldout_accuracy_mse /= hold_s.size();
    rep.persistence_accuracy_mse /= hold_s.size();
  }
  if (report) *report = std::move(rep);
  return model;
}

VirtualEnvironment::VirtualEnvironment(EnvConfig cfg, std::shared_ptr<const TransitionModel> model)
    : cfg_(std::move(cfg)), model_(std::move(model)), system_(cfg_) {
  cfg_.validate();
  require(model_ != nullptr, "VirtualEnvironment: no model");
  require(model_->num_devices() == cfg_.num_devices(), "VirtualEnvironment: model device count mismatch");
}

VirtualEnvironment::VirtualEnvironment(const VirtualEnvironment& other)
    : cfg_(other.cfg_),
      model_(other.model_),
      system_(other.system_),
      stats_(other.stats_),
      history_(other.history_),
      round_(other.round_) {
  system_.rebind(cfg_);
}

std::unique_ptr<EnvironmentBase> VirtualEnvironment::clone() const {
  return std::make_unique<VirtualEnvironment>(*this);
}

Observation VirtualEnvironment::make_observation() const {
  Observation o;
  o.sys = system_.observe();
  o.stats = stats_;
  o.round = round_;
  o.num_rounds = cfg_.sys.num_rounds;
  o.select_count = cfg_.select_count;
  o.qos_time = cfg_.sys.qos_time;
  o.bandwidth = cfg_.sys.bandwidth;
  o.sigma = cfg_.sys.sigma;
  o.text = render_prompt(o);
  return o;
}

Observation VirtualEnvironment::reset(std::uint64_t seed) {
  EpisodeStart start = start_episode(cfg_, seed);
  stats_ = std::move(start.stats);
  std::vector<double> sizes(stats_.data_size.data(), stats_.data_size.data() + stats_.data_size.size());
  system_.reset(seed, sizes);
  history_.clear();
  round_ = 0;
  return make_observation();
}

StepResult VirtualEnvironment::step(std::span<const int> selection) {
  require(stats_.num_devices() > 0, "step: call reset first");
  require(round_ < cfg_.sys.num_rounds, "step: episode already finished");
  const int n = cfg_.num_devices();
  check_selection_size(selection, n, cfg_.select_count);

  StepResult res;
  res.allocation = system_.allocate(selection);
  res.feasible = res.allocation.feasible;
  if (!res.feasible) {
    res.accuracy = stats_.prev_accuracy;
  } else {
    history_.push_back(step_input(stats_.flatten(), selection, n));
    if (static_cast<int>(history_.size()) > model_->window()) history_.erase(history_.begin());
    const WorldPrediction p = model_->predict(history_);
    stats_ = StatState::unflatten(p.next_stats, n);
    for (int d : selection) stats_.selected[d] = true;
    res.accuracy = p.accuracy;
    res.energy = res.allocation.totals.energy;
    res.time = res.allocation.totals.time;
    res.reward = round_reward(res.accuracy, res.energy, cfg_.sys.sigma, cfg_.energy_scale);
  }
  system_.advance(res.allocation);
  ++round_;
  res.done = round_ == cfg_.sys.num_rounds;
  res.next = make_observation();
  return res;
}

std::uint64_t episode_seed(std::uint64_t seed, int episode) {
  return derive_seed(seed, static_cast<std::uint64_t>(episode));
}

Trajectory collect_episode(EnvironmentBase& env, const BehaviorPolicy& behavior, std::uint64_t seed, int episode,
                           const std::string& fingerprint) {
  Trajectory t;
  t.seed = episode_seed(seed, episode);
  t.fingerprint = fingerprint;
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(episode) + 1'000'000));
  Observation obs = env.reset(t.seed);
  for (bool done = false; !done;) {
    const Selection sel = behavior(obs, rng);
    StepResult r = env.step(sel);
    t.rounds.push_back(make_record(obs, sel, r));
    done = r.done;
    obs = std::move(r.next);
  }
  return t;
}

std::vector<Trajectory> collect_trajectories(EnvironmentBase& env, const BehaviorPolicy& behavior,
                                             int episodes, std::uint64_t seed,
                                             const std::string& fingerprint) {
  require(episodes >= 1, "collect_trajectories: need at least one episode");
  std::vector<Trajectory> out;
  out.reserve(episodes);
  for (int e = 0; e < episodes; ++e) out.push_back(collect_episode(env, behavior, seed, e, fingerprint));
  return out;
}

ReplayReport replay_rewards(EnvironmentBase& env, std::span<const Trajectory> trajs) {
  ReplayReport rep;
  double reward_err = 0, acc_err = 0;
  for (const auto& t : trajs) {
    env.reset(t.seed);
    for (const auto& r : t.rounds) {
      const StepResult s = env.step(r.selection);
      require(s.feasible == r.feasible, "replay_rewards: feasibility differs from the recorded round");
      reward_err += std::abs(s.reward - r.reward);
      acc_err += std::abs(s.accuracy - r.accuracy);
      ++rep.rounds;
    }
  }
  require(rep.rounds > 0, "replay_rewards: nothing to replay");
  rep.mean_reward_error = reward_err / rep.rounds;
  rep.mean_accuracy_error = acc_err / rep.rounds;
  return rep;
}

}  // namespace wfl
