// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0

#include "wfl/fl_sim.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <numeric>

using namespace wfl;
using doctest::Approx;

namespace {

Dataset separable_two_class() {
  Dataset d;
  d.num_classes = 2;
  d.features.resize(40, 2);
  for (int i = 0; i < 40; ++i) {
    const double s = i < 20 ? -1.0 : 1.0;
    d.features(i, 0) = s * (1.0 + 0.05 * (i % 7));
    d.features(i, 1) = 0.1 * ((i * 13) % 5) - 0.2;
    d.labels.push_back(i < 20 ? 0 : 1);
  }
  return d;
}

std::vector<int> class_histogram(const Dataset& d) {
  std::vector<int> h(d.num_classes, 0);
  for (int l : d.labels) ++h[l];
  return h;
}

}  // namespace

TEST_CASE("dataset validation") {
  Dataset d = separable_two_class();
  CHECK_NOTHROW(d.validate());
  d.labels.back() = 2;
  CHECK_THROWS_AS(d.validate(), InvalidArgument);
  d.labels.pop_back();
  CHECK_THROWS_AS(d.validate(), InvalidArgument);
}

TEST_CASE("dataset file round trip") {
  const Dataset d = make_blobs(50, 3, 4, 2.0, 0.5, 9);
  const auto path = std::filesystem::temp_directory_path() / "wflsel_ds_test.txt";
  save_dataset(d, path.string());
  const Dataset r = load_dataset(path.string());
  std::filesystem::remove(path);
  CHECK(r.labels == d.labels);
  CHECK(r.num_classes == 4);
  CHECK((r.features - d.features).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dirichlet partition") {
  const Dataset d = make_blobs(10000, 2, 4, 3.0, 1.0, 1);
  SUBCASE("coverage and determinism") {
    auto a = partition_dirichlet(d, 20, 0.2, 5);
    auto b = partition_dirichlet(d, 20, 0.2, 5);
    Eigen::Index total = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      total += a[i].size();
      CHECK(a[i].size() > 0);
      CHECK(a[i].labels == b[i].labels);
    }
    CHECK(total == d.size());
  }
  SUBCASE("large alpha is near IID") {
    auto parts = partition_dirichlet(d, 4, 1e6, 3);
    for (const auto& p : parts) {
      auto h = class_histogram(p);
      for (int c : h) CHECK(std::abs(double(c) / p.size() - 0.25) < 0.05);
    }
  }
  SUBCASE("small alpha is skewed") {
    auto parts = partition_dirichlet(d, 20, 0.2, 3);
    int skewed = 0;
    for (const auto& p : parts) {
      auto h = class_histogram(p);
      skewed += *std::max_element(h.begin(), h.end()) > 0.6 * p.size();
    }
    CHECK(skewed >= 5);
  }
  SUBCASE("tiny data still fills every device") {
    Dataset small = make_blobs(12, 2, 4, 3.0, 1.0, 2);
    auto parts = partition_dirichlet(small, 10, 0.05, 8);
    for (const auto& p : parts) CHECK(p.size() >= 1);
  }
}

TEST_CASE("logistic gradient matches central differences") {
  const Dataset d = make_blobs(60, 3, 4, 2.0, 1.0, 4);
  Rng rng(6);
  std::normal_distribution<double> gauss(0.0, 0.5);
  for (int trial = 0; trial < 20; ++trial) {
    ModelParams w(model_size(3, 4));
    for (auto& x : w) x = gauss(rng);
    const Vector g = loss_and_grad(w, d).grad;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double h = 1e-5;
      ModelParams wp = w, wm = w;
      wp[i] += h;
      wm[i] -= h;
      const double fd = (loss_only(wp, d) - loss_only(wm, d)) / (2 * h);
      CHECK(std::abs(fd - g[i]) <= 1e-4 * std::max(1e-3, std::abs(fd)));
    }
  }
}

TEST_CASE("local training") {
  const Dataset d = separable_two_class();
  FLConfig cfg;
  cfg.num_classes = 2;
  SUBCASE("zero step returns the input") {
    cfg.local_iters = 1;
    cfg.learning_rate = 0;
    ModelParams w = ModelParams::Constant(model_size(2, 2), 0.3);
    auto u = local_train(w, d, cfg);
    CHECK(u.params == w);
    CHECK((u.grad - loss_and_grad(w, d).grad).norm() == 0.0);
  }
  SUBCASE("monotone descent on separable data") {
    cfg.local_iters = 50;
    cfg.learning_rate = 0.5;
    auto u = local_train(ModelParams::Zero(model_size(2, 2)), d, cfg);
    REQUIRE(u.history.size() == 51);
    for (std::size_t i = 1; i < u.history.size(); ++i) CHECK(u.history[i] < u.history[i - 1]);
  }
  SUBCASE("divergence is reported") {
    cfg.local_iters = 2;
    cfg.learning_rate = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(local_train(ModelParams::Constant(model_size(2, 2), 1.0), d, cfg), NumericError);
  }
}

TEST_CASE("aggregation") {
  ModelParams w = ModelParams::Constant(3, 0.7);
  std::vector<WeightedModel> same{{w, 2}, {w, 5}};
  CHECK((aggregate(same, AggregationMode::ParticipatingMass, 7) - w).norm() < 1e-15);

  std::vector<WeightedModel> two{{ModelParams::Constant(1, 0.0), 1}, {ModelParams::Constant(1, 4.0), 3}};
  CHECK(aggregate(two, AggregationMode::ParticipatingMass, 4)[0] == Approx(3.0));
  CHECK(aggregate(two, AggregationMode::LiteralGlobalMass, 8)[0] == Approx(1.5));

  std::vector<WeightedModel> single{{ModelParams::Constant(2, -1.25), 9}};
  CHECK(aggregate(single, AggregationMode::ParticipatingMass, 100)[0] == -1.25);

  std::vector<WeightedModel> swapped{two[1], two[0]};
  CHECK(aggregate(swapped, AggregationMode::ParticipatingMass, 4)[0] ==
        Approx(aggregate(two, AggregationMode::ParticipatingMass, 4)[0]).epsilon(1e-15));
}

TEST_CASE("evaluation") {
  const Dataset d = separable_two_class();
  CHECK(evaluate(ModelParams::Zero(model_size(2, 2)), d) == 0.5);
  ModelParams perfect = ModelParams::Zero(model_size(2, 2));
  Eigen::Map<Matrix> w(perfect.data(), 2, 3);
  w(0, 0) = -10;
  w(1, 0) = 10;
  CHECK(evaluate(perfect, d) == 1.0);
}

TEST_CASE("sign agreement") {
  Vector a(3), b(3);
  a << 1, -1, 1;
  b << 1, 1, 1;
  CHECK(sign_agreement(a, a) == 1.0);
  CHECK(sign_agreement(a, b) == Approx(2.0 / 3.0));
  CHECK(sign_agreement(a, b) == sign_agreement(b, a));
}

TEST_CASE("statistics features") {
  const Dataset d = make_blobs(200, 2, 4, 2.0, 1.0, 3);
  auto parts = partition_dirichlet(d, 3, 1.0, 1);
  FLConfig cfg;
  const ModelParams w = ModelParams::Zero(model_size(2, 4));
  const Vector gg = loss_and_grad(w, d).grad;
  auto u = local_train(w, parts[1], cfg);
  std::vector<TrainedLocal> locals{{1, u}};
  StatState s = stat_features(w, gg, locals, parts, 0.4);
  CHECK(s.selected == std::vector<bool>{false, true, false});
  CHECK(s.local_loss[0] == 0.0);
  CHECK(s.local_loss[1] == Approx(u.loss));
  CHECK(s.grad_inner[1] == Approx(u.grad.dot(gg)));
  CHECK(s.prev_accuracy == 0.4);
  for (int i = 0; i < 3; ++i) CHECK(s.global_loss[i] == Approx(std::log(4.0)));

  // Anti-parallel gradient gives minus the squared norm; scaling is linear.
  TrainedLocal anti{0, u};
  anti.update.grad = -gg;
  anti.update.params = w;
  std::vector<TrainedLocal> l2{anti};
  StatState s2 = stat_features(w, gg, l2, parts, 0);
  CHECK(s2.grad_inner[0] == Approx(-gg.squaredNorm()));
  CHECK(s2.sign_agree[0] == 1.0);
  anti.update.grad *= 3;
  std::vector<TrainedLocal> l3{anti};
  CHECK(stat_features(w, gg, l3, parts, 0).grad_inner[0] == Approx(3 * s2.grad_inner[0]));

  const Vector flat = s.flatten();
  CHECK(flat.size() == 3 * StatState::kPerDevice + 1);
  CHECK((StatState::unflatten(flat, 3).flatten() - flat).norm() == 0.0);
}

TEST_CASE("quantization") {
  Vector v(5);
  v << 0.1, -0.3, 0.25, 0.7, -0.05;
  CHECK((quantize_update(v, 32) - v).cwiseAbs().maxCoeff() < 1e-6);
  const Vector c = Vector::Constant(4, 0.42);
  CHECK(quantize_update(c, 2) == c);

  Vector pm(6);
  pm << -1, -0.6, -0.1, 0.2, 0.51, 1;
  const Vector q1 = quantize_update(pm, 1);
  Vector expect(6);
  expect << -1, -1, -1, 1, 1, 1;
  CHECK(q1 == expect);

  Rng rng(4);
  std::normal_distribution<double> gauss;
  for (int bits : {1, 2, 3, 4, 8}) {
    Vector x(50);
    for (auto& e : x) e = gauss(rng);
    const Vector q = quantize_update(x, bits);
    CHECK(quantize_update(q, bits) == q);
    const double step = (x.maxCoeff() - x.minCoeff()) / (std::ldexp(1.0, bits) - 1);
    CHECK((q - x).cwiseAbs().maxCoeff() <= 0.5 * step + 1e-12);
  }
}

TEST_CASE("differential privacy noise") {
  Rng rng(10);
  Vector u = Vector::Constant(4, 0.5);
  DpSpec loose{10.0, 1e12, 1e-5, 1};
  CHECK((dp_noise(u, loose, rng) - u).norm() < 1e-6);

  Vector big = Vector::Zero(4);
  big[0] = 6;
  big[1] = 8;
  DpSpec clip{1.0, 1e15, 1e-5, 1};
  CHECK(dp_noise(big, clip, rng).norm() == Approx(1.0).epsilon(1e-9));

  DpSpec spec{1.0, 1.0, 1e-5, 3};
  const double sigma = spec.noise_std();
  CHECK(sigma == Approx(std::sqrt(6 * std::log(1.25e5))));
  Vector z = Vector::Zero(10000);
  Vector n = dp_noise(z, spec, rng);
  const double mean = n.mean();
  const double sd = std::sqrt((n.array() - mean).square().sum() / n.size());
  CHECK(std::abs(sd - sigma) / sigma < 0.05);
  CHECK_THROWS_AS(dp_noise(z, DpSpec{1, 0, 1e-5, 1}, rng), InvalidArgument);
}
