// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0
//
// Fully connected tanh network over a flat parameter vector, with manual
// backpropagation, plus the Adam update rule. Samples are columns.

#pragma once

#include "wfl/core.hpp"

#include <cmath>
#include <vector>

namespace wfl {

template <typename Scalar>
class Mlp {
 public:
  using Vec = VectorX<Scalar>;
  using Mat = MatrixX<Scalar>;

  Mlp() = default;
  /// `sizes` = {inputs, hidden..., outputs}; hidden layers use tanh, the
  /// output layer is linear.
  explicit Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    require(sizes_.size() >= 2, "Mlp: need at least input and output sizes");
    for (int s : sizes_) require(s > 0, "Mlp: layer sizes must be positive");
  }

  const std::vector<int>& sizes() const { return sizes_; }
  int inputs() const { return sizes_.front(); }
  int outputs() const { return sizes_.back(); }
  std::size_t num_layers() const { return sizes_.size() - 1; }

  Eigen::Index num_params() const {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) n += Eigen::Index(sizes_[l + 1]) * (sizes_[l] + 1);
    return n;
  }

  /// Glorot-uniform weights, zero biases. `output_gain` scales the last layer.
  Vec init(Rng& rng, Scalar output_gain = Scalar(1)) const {
    Vec p = Vec::Zero(num_params());
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const int in = sizes_[l], out = sizes_[l + 1];
      const double lim = std::sqrt(6.0 / (in + out)) * (l + 1 == num_layers() ? double(output_gain) : 1.0);
      std::uniform_real_distribution<double> u(-lim, lim);
      for (Eigen::Index k = 0; k < Eigen::Index(in) * out; ++k) p[off + k] = Scalar(u(rng));
      off += Eigen::Index(in) * out + out;
    }
    return p;
  }

  struct Cache {
    std::vector<Mat> acts;  // acts[0] = input, acts[l+1] = layer l output
  };

  Mat forward(const Vec& params, const Mat& x, Cache* cache = nullptr) const {
    require(params.size() == num_params(), "Mlp::forward: parameter size mismatch");
    require(x.rows() == inputs(), "Mlp::forward: input dimension mismatch");
    Mat a = x;
    if (cache) {
      cache->acts.clear();
      cache->acts.push_back(a);
    }
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const int in = sizes_[l], out = sizes_[l + 1];
      Eigen::Map<const Mat> w(params.data() + off, out, in);
      Eigen::Map<const Vec> b(params.data() + off + Eigen::Index(in) * out, out);
      off += Eigen::Index(in) * out + out;
      Mat z = w * a;
      z.colwise() += b;
      if (l + 1 < num_layers()) z = z.array().tanh().matrix();
      a = std::move(z);
      if (cache) cache->acts.push_back(a);
    }
    return a;
  }

  /// Accumulates d(sum of upstream . output)/d(params) into `grad`; returns
  /// the gradient with respect to the input.
  Mat backward(const Vec& params, const Cache& cache, const Mat& upstream, Vec& grad) const {
    require(grad.size() == num_params(), "Mlp::backward: gradient size mismatch");
    std::vector<Eigen::Index> offsets(num_layers());
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      offsets[l] = off;
      off += Eigen::Index(sizes_[l + 1]) * (sizes_[l] + 1);
    }
    Mat delta = upstream;
    for (std::size_t li = num_layers(); li-- > 0;) {
      const int in = sizes_[li], out = sizes_[li + 1];
      if (li + 1 < num_layers()) {
        delta = (delta.array() * (Scalar(1) - cache.acts[li + 1].array().square())).matrix();
      }
      Eigen::Map<Mat> gw(grad.data() + offsets[li], out, in);
      Eigen::Map<Vec> gb(grad.data() + offsets[li] + Eigen::Index(in) * out, out);
      gw.noalias() += delta * cache.acts[li].transpose();
      gb += delta.rowwise().sum();
      Eigen::Map<const Mat> w(params.data() + offsets[li], out, in);
      delta = w.transpose() * delta;
    }
    return delta;
  }

 private:
  std::vector<int> sizes_;
};

/// Adam on a flat parameter vector. `step` descends; pass a negated gradient
/// to ascend.
class Adam {
 public:
  Adam() = default;
  Adam(Eigen::Index n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(Vector::Zero(n)), v_(Vector::Zero(n)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(Vector& params, const Vector& grad) {
    require(grad.size() == m_.size() && params.size() == m_.size(), "Adam: size mismatch");
    ++t_;
    m_ = beta1_ * m_ + (1 - beta1_) * grad;
    v_ = beta2_ * v_ + (1 - beta2_) * grad.cwiseAbs2();
    const double c1 = 1 - std::pow(beta1_, t_), c2 = 1 - std::pow(beta2_, t_);
    params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
  }

  double learning_rate() const { return lr_; }

 private:
  Vector m_, v_;
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int t_ = 0;
};

}  // namespace wfl
