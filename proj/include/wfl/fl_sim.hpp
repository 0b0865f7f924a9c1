// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0
//
// Federated-learning statistics: data partitioning, the reference learner
// (multinomial logistic regression), aggregation and per-round features.

#pragma once

#include "wfl/core.hpp"

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace wfl {

struct Dataset {
  Matrix features;          // rows = samples
  std::vector<int> labels;  // in [0, num_classes)
  int num_classes = 0;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
  void validate() const;
};

enum class AggregationMode { ParticipatingMass, LiteralGlobalMass };

struct FLConfig {
  int num_devices = 8;
  int local_iters = 5;
  double learning_rate = 0.1;
  double alpha = 0.2;
  int num_classes = 4;
  AggregationMode aggregation = AggregationMode::ParticipatingMass;

  void validate() const;
};

/// Gaussian class blobs with centres evenly spaced on a circle (first two
/// feature axes) of radius `separation`.
Dataset make_blobs(int samples, int dim, int num_classes, double separation, double noise,
                   std::uint64_t seed);

/// Reads the plain text format: header `d L n`, then n rows of d reals and
/// an integer label.
Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& data, const std::string& path);

/// Splits per-class sample counts across devices with Dirichlet(alpha)
/// proportions. Empty devices take one sample from the largest device.
std::vector<Dataset> partition_dirichlet(const Dataset& data, int num_devices, double alpha,
                                         std::uint64_t seed);

/// Number of weights of the logistic model for `dim` features.
inline Eigen::Index model_size(Eigen::Index dim, int num_classes) { return num_classes * (dim + 1); }

struct LossGrad {
  double loss = 0;
  Vector grad;
};

/// Mean cross-entropy of the logistic model and its gradient.
LossGrad loss_and_grad(const ModelParams& params, const Dataset& data);
double loss_only(const ModelParams& params, const Dataset& data);

struct LocalUpdate {
  ModelParams params;
  double loss = 0;               // F_n at the returned params
  Vector grad;                   // grad F_n at the returned params
  std::vector<double> history;   // loss before each step, then final loss
};

/// Runs exactly `cfg.local_iters` full-batch gradient steps from `global`.
LocalUpdate local_train(const ModelParams& global, const Dataset& data, const FLConfig& cfg);

struct WeightedModel {
  ModelParams params;
  double mass = 0;  // |D_n|
};

ModelParams aggregate(std::span<const WeightedModel> locals, AggregationMode mode, double total_mass);

/// Fraction of argmax-correct predictions; ties resolve to the lowest class.
double evaluate(const ModelParams& params, const Dataset& test);

/// Fraction of coordinates whose signs agree (zero only matches zero).
template <typename DerivedA, typename DerivedB>
double sign_agreement(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  require(a.size() == b.size() && a.size() > 0, "sign_agreement: size mismatch");
  Eigen::Index same = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const auto sa = (a(i) > 0) - (a(i) < 0);
    const auto sb = (b(i) > 0) - (b(i) < 0);
    same += sa == sb;
  }
  return static_cast<double>(same) / static_cast<double>(a.size());
}

/// Statistics part of the environment state.
struct StatState {
  Vector local_loss;   // F_n, selected devices only (0 elsewhere)
  Vector grad_inner;   // <grad F_n, grad F_G>, selected only
  Vector sign_agree;   // e(w_n, w_G), selected only
  Vector data_size;    // |D_n|, every device
  Vector global_loss;  // l_n, loss of the latest global model on D_n
  std::vector<bool> selected;
  double prev_accuracy = 0;

  int num_devices() const { return static_cast<int>(data_size.size()); }

  static constexpr int kPerDevice = 5;
  /// [l_n, F_n, grad_inner, sign_agree, |D_n|] per device, then accuracy.
  Vector flatten() const;
  static StatState unflatten(const Vector& v, int num_devices);
};

struct TrainedLocal {
  int device = -1;
  LocalUpdate update;
};

StatState stat_features(const ModelParams& global, const Vector& global_grad,
                        std::span<const TrainedLocal> locals, std::span<const Dataset> all_data,
                        double prev_accuracy);

/// Uniform quantization onto 2^bits levels spanning [min, max] of the vector,
/// endpoints included, round-to-nearest; returns the dequantized values.
ModelParams quantize_update(const ModelParams& params, int bits);

struct DpSpec {
  double clip_norm = 1.0;
  double epsilon = 1.0;
  double delta = 1e-5;
  int rounds = 1;

  double noise_std() const;
};

/// Clips to L2 norm `clip_norm` and adds N(0, sigma^2) per coordinate with
/// sigma = clip_norm * sqrt(2 rounds ln(1.25/delta)) / epsilon.
ModelParams dp_noise(const ModelParams& params, const DpSpec& spec, Rng& rng);

}  // namespace wfl
