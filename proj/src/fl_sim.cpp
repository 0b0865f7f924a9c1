// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0

#include "wfl/fl_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace wfl {

void Dataset::validate() const {
  require(static_cast<std::size_t>(features.rows()) == labels.size(),
          "Dataset: feature rows must match label count");
  for (int y : labels) {
    require(y >= 0 && y < num_classes, "Dataset: label out of range");
  }
}

void FLConfig::validate() const {
  require(num_devices >= 2, "FLConfig: need at least 2 devices");
  require(local_iters >= 1, "FLConfig: local_iters must be >= 1");
  require(learning_rate >= 0, "FLConfig: learning_rate must be non-negative");
  require(alpha > 0, "FLConfig: alpha must be positive");
  require(num_classes >= 2, "FLConfig: need at least 2 classes");
}

Dataset make_blobs(int samples, int dim, int num_classes, double separation, double noise,
                   std::uint64_t seed) {
  require(samples > 0 && dim >= 2 && num_classes >= 2, "make_blobs: bad shape");
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, noise);
  Dataset d;
  d.num_classes = num_classes;
  d.features.resize(samples, dim);
  d.labels.resize(samples);
  for (int i = 0; i < samples; ++i) {
    const int y = i % num_classes;
    const double angle = 2.0 * M_PI * y / num_classes;
    d.labels[i] = y;
    for (int j = 0; j < dim; ++j) {
      double centre = 0;
      if (j == 0) centre = separation * std::cos(angle);
      if (j == 1) centre = separation * std::sin(angle);
      d.features(i, j) = centre + gauss(rng);
    }
  }
  return d;
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  long d = 0, L = 0, n = 0;
  if (!(in >> d >> L >> n) || d <= 0 || L < 2 || n < 0) {
    throw std::runtime_error("load_dataset: bad header in " + path);
  }
  Dataset out;
  out.num_classes = static_cast<int>(L);
  out.features.resize(n, d);
  out.labels.resize(n);
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < d; ++j) {
      if (!(in >> out.features(i, j))) throw std::runtime_error("load_dataset: truncated " + path);
    }
    if (!(in >> out.labels[i])) throw std::runtime_error("load_dataset: truncated " + path);
  }
  out.validate();
  return out;
}

void save_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
  out << data.dim() << ' ' << data.num_classes << ' ' << data.size() << '\n';
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < data.dim(); ++j) out << data.features(i, j) << ' ';
    out << data.labels[i] << '\n';
  }
}

namespace {

Dataset subset(const Dataset& data, const std::vector<int>& rows) {
  Dataset out;
  out.num_classes = data.num_classes;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), data.dim());
  out.labels.resize(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.features.row(static_cast<Eigen::Index>(k)) = data.features.row(rows[k]);
    out.labels[k] = data.labels[rows[k]];
  }
  return out;
}

}  // namespace

std::vector<Dataset> partition_dirichlet(const Dataset& data, int num_devices, double alpha,
                                         std::uint64_t seed) {
  require(alpha > 0, "partition_dirichlet: alpha must be positive");
  require(num_devices >= 1, "partition_dirichlet: need at least one device");
  require(data.num_classes >= 2, "partition_dirichlet: need at least 2 classes");
  if (data.size() < num_devices) {
    throw InvalidArgument("partition_dirichlet: fewer samples than devices");
  }
  Rng rng(seed);
  std::gamma_distribution<double> gamma(alpha, 1.0);

  std::vector<std::vector<int>> by_class(data.num_classes);
  for (Eigen::Index i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(static_cast<int>(i));

  std::vector<std::vector<int>> parts(num_devices);
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<double> q(num_devices);
    double sum = 0;
    for (auto& x : q) sum += (x = gamma(rng));
    if (!(sum > 0)) {
      std::fill(q.begin(), q.end(), 1.0);
      sum = num_devices;
    }
    // Largest-remainder rounding keeps the class total exact.
    const double n_c = static_cast<double>(idx.size());
    std::vector<std::size_t> count(num_devices);
    std::vector<std::pair<double, int>> frac(num_devices);
    std::size_t used = 0;
    for (int n = 0; n < num_devices; ++n) {
      const double share = q[n] / sum * n_c;
      count[n] = static_cast<std::size_t>(std::floor(share));
      frac[n] = {share - std::floor(share), n};
      used += count[n];
    }
    std::stable_sort(frac.begin(), frac.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; used < idx.size(); ++k, ++used) ++count[frac[k % num_devices].second];

    std::size_t pos = 0;
    for (int n = 0; n < num_devices; ++n) {
      parts[n].insert(parts[n].end(), idx.begin() + pos, idx.begin() + pos + count[n]);
      pos += count[n];
    }
  }

  for (auto& p : parts) {
    if (!p.empty()) continue;
    auto largest = std::max_element(parts.begin(), parts.end(),
                                    [](auto& a, auto& b) { return a.size() < b.size(); });
    p.push_back(largest->back());
    largest->pop_back();
  }

  std::vector<Dataset> out;
  out.reserve(num_devices);
  for (auto& p : parts) out.push_back(subset(data, p));
  return out;
}

namespace {

struct Logits {
  Matrix probs;  // n x L softmax
  double loss = 0;
};

Logits forward(const ModelParams& params, const Dataset& data) {
  const Eigen::Index d = data.dim();
  const int L = data.num_classes;
  require(params.size() == model_size(d, L), "logistic model: parameter size mismatch");
  Eigen::Map<const Matrix> w(params.data(), L, d + 1);
  Matrix z = data.features * w.leftCols(d).transpose();
  z.rowwise() += w.col(d).transpose();
  Logits out;
  out.probs.resize(z.rows(), L);
  double total = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double zmax = z.row(i).maxCoeff();
    auto e = (z.row(i).array() - zmax).exp();
    const double s = e.sum();
    out.probs.row(i) = e / s;
    total += zmax + std::log(s) - z(i, data.labels[i]);
  }
  out.loss = data.size() > 0 ? total / static_cast<double>(data.size()) : 0.0;
  return out;
}

}  // namespace

LossGrad loss_and_grad(const ModelParams& params, const Dataset& data) {
  require(data.size() > 0, "loss_and_grad: empty dataset");
  Logits fw = forward(params, data);
  const Eigen::Index d = data.dim();
  const int L = data.num_classes;
  Matrix g = fw.probs;
  for (Eigen::Index i = 0; i < data.size(); ++i) g(i, data.labels[i]) -= 1.0;
  g /= static_cast<double>(data.size());
  LossGrad out;
  out.loss = fw.loss;
  out.grad.resize(params.size());
  Eigen::Map<Matrix> gw(out.grad.data(), L, d + 1);
  gw.leftCols(d) = g.transpose() * data.features;
  gw.col(d) = g.colwise().sum().transpose();
  return out;
}

double loss_only(const ModelParams& params, const Dataset& data) {
  require(data.size() > 0, "loss_only: empty dataset");
  return forward(params, data).loss;
}

LocalUpdate local_train(const ModelParams& global, const Dataset& data, const FLConfig& cfg) {
  require(data.size() > 0, "local_train: empty dataset");
  require(cfg.local_iters >= 1, "local_train: local_iters must be >= 1");
  LocalUpdate out;
  out.params = global;
  out.history.reserve(cfg.local_iters + 1);
  for (int i = 0; i < cfg.local_iters; ++i) {
    LossGrad lg = loss_and_grad(out.params, data);
    if (!std::isfinite(lg.loss)) throw NumericError("local_train: non-finite loss (learning rate too large?)");
    out.history.push_back(lg.loss);
    out.params -= cfg.learning_rate * lg.grad;
  }
  LossGrad fin = loss_and_grad(out.params, data);
  if (!std::isfinite(fin.loss) || !out.params.allFinite()) {
    throw NumericError("local_train: non-finite loss (learning rate too large?)");
  }
  out.history.push_back(fin.loss);
  out.loss = fin.loss;
  out.grad = std::move(fin.grad);
  return out;
}

ModelParams aggregate(std::span<const WeightedModel> locals, AggregationMode mode, double total_mass) {
  require(!locals.empty(), "aggregate: no local models");
  double denom = 0;
  if (mode == AggregationMode::ParticipatingMass) {
    for (const auto& m : locals) denom += m.mass;
  } else {
    denom = total_mass;
  }
  if (!(denom > 0)) throw InvalidArgument("aggregate: zero total weight");
  ModelParams out = ModelParams::Zero(locals.front().params.size());
  for (const auto& m : locals) {
    require(m.params.size() == out.size(), "aggregate: parameter size mismatch");
    out += (m.mass / denom) * m.params;
  }
  return out;
}

double evaluate(const ModelParams& params, const Dataset& test) {
  require(test.size() > 0, "evaluate: empty test set");
  Logits fw = forward(params, test);
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    int arg = 0;
    for (int c = 1; c < test.num_classes; ++c) {
      if (fw.probs(i, c) > fw.probs(i, arg)) arg = c;
    }
    correct += arg == test.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

Vector StatState::flatten() const {
  const int n = num_devices();
  Vector v(kPerDevice * n + 1);
  for (int i = 0; i < n; ++i) {
    v.segment(kPerDevice * i, kPerDevice) << global_loss[i], local_loss[i], grad_inner[i],
        sign_agree[i], data_size[i];
  }
  v[kPerDevice * n] = prev_accuracy;
  return v;
}

StatState StatState::unflatten(const Vector& v, int n) {
  require(v.size() == kPerDevice * n + 1, "StatState::unflatten: size mismatch");
  StatState s;
  s.global_loss.resize(n);
  s.local_loss.resize(n);
  s.grad_inner.resize(n);
  s.sign_agree.resize(n);
  s.data_size.resize(n);
  s.selected.assign(n, false);
  for (int i = 0; i < n; ++i) {
    s.global_loss[i] = v[kPerDevice * i];
    s.local_loss[i] = v[kPerDevice * i + 1];
    s.grad_inner[i] = v[kPerDevice * i + 2];
    s.sign_agree[i] = v[kPerDevice * i + 3];
    s.data_size[i] = v[kPerDevice * i + 4];
  }
  s.prev_accuracy = v[kPerDevice * n];
  return s;
}

StatState stat_features(const ModelParams& global, const Vector& global_grad,
                        std::span<const TrainedLocal> locals, std::span<const Dataset> all_data,
                        double prev_accuracy) {
  const int n = static_cast<int>(all_data.size());
  StatState s;
  s.local_loss = Vector::Zero(n);
  s.grad_inner = Vector::Zero(n);
  s.sign_agree = Vector::Zero(n);
  s.data_size.resize(n);
  s.global_loss.resize(n);
  s.selected.assign(n, false);
  s.prev_accuracy = prev_accuracy;
  for (int i = 0; i < n; ++i) {
    s.data_size[i] = static_cast<double>(all_data[i].size());
    s.global_loss[i] = loss_only(global, all_data[i]);
  }
  for (const auto& t : locals) {
    require(t.device >= 0 && t.device < n, "stat_features: device out of range");
    s.selected[t.device] = true;
    s.local_loss[t.device] = t.update.loss;
    s.grad_inner[t.device] = t.update.grad.dot(global_grad);
    s.sign_agree[t.device] = sign_agreement(t.update.params, global);
  }
  return s;
}

ModelParams quantize_update(const ModelParams& params, int bits) {
  require(bits >= 1, "quantize_update: bits must be >= 1");
  if (params.size() == 0) return params;
  const double lo = params.minCoeff(), hi = params.maxCoeff();
  if (!(hi > lo)) return params;
  const double steps = std::ldexp(1.0, std::min(bits, 62)) - 1.0;
  const double delta = (hi - lo) / steps;
  ModelParams out(params.size());
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double k = std::clamp(std::round((params[i] - lo) / delta), 0.0, steps);
    out[i] = k == steps ? hi : lo + k * delta;
  }
  return out;
}

double DpSpec::noise_std() const {
  return clip_norm * std::sqrt(2.0 * rounds * std::log(1.25 / delta)) / epsilon;
}

ModelParams dp_noise(const ModelParams& params, const DpSpec& spec, Rng& rng) {
  require(spec.epsilon > 0, "dp_noise: epsilon must be positive");
  require(spec.delta > 0 && spec.delta < 1, "dp_noise: delta must be in (0, 1)");
  require(spec.clip_norm > 0, "dp_noise: clip_norm must be positive");
  require(spec.rounds >= 1, "dp_noise: rounds must be >= 1");
  ModelParams out = params;
  const double norm = out.norm();
  if (norm > spec.clip_norm) out *= spec.clip_norm / norm;
  std::normal_distribution<double> gauss(0.0, spec.noise_std());
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += gauss(rng);
  return out;
}

}  // namespace wfl
