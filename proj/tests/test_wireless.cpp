// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0

#include "wfl/wireless.hpp"

#include <doctest.h>

#include <algorithm>
#include <vector>

using namespace wfl;
using doctest::Approx;

TEST_CASE("compute time and energy at the reference point") {
  DeviceProfile p;
  p.cycles_per_sample = 7e5;
  p.data_size = 1000;
  CHECK(compute_time(p, 5, 1e9) == Approx(3.5).epsilon(1e-12));
  CHECK(compute_energy(p, 5, 1e9) == Approx(0.35).epsilon(1e-12));
  CHECK(compute_time(p, 5, 2e9) == Approx(compute_time(p, 5, 1e9) / 2).epsilon(1e-14));
  CHECK(compute_energy(p, 5, 2e9) == Approx(4 * compute_energy(p, 5, 1e9)).epsilon(1e-14));
  CHECK(compute_energy(p, 5, 1e-3) < 1e-20);
  // Time at f_max is the smallest achievable.
  CHECK(compute_time(p, 5, p.f_max) <= compute_time(p, 5, 0.999 * p.f_max));
  // T * E = kappa W^2 f.
  const double w = workload_cycles(p.cycles_per_sample, p.data_size, 5);
  CHECK(compute_time(p, 5, 1.3e9) * compute_energy(p, 5, 1.3e9) ==
        Approx(p.kappa * w * w * 1.3e9).epsilon(1e-12));
  CHECK_THROWS_AS(compute_time(p, 5, 3e9), InvalidArgument);
  CHECK_THROWS_AS(compute_energy(p, 5, 0.0), InvalidArgument);
}

TEST_CASE("compute formulas evaluate in long double") {
  const long double t = compute_time<long double>(3.5e9L, 1e9L);
  CHECK(static_cast<double>(t) == Approx(3.5));
}

TEST_CASE("uplink rate") {
  CHECK(tx_rate(1e5, 0.0, 1e-6, 3.98e-21) == 0.0);
  CHECK(tx_rate(1e5, 0.1, 1e-6, 3.98e-21) == Approx(2.79e6).epsilon(2e-3));
  double prev = 0;
  for (double pw = 0.01; pw <= 1.0; pw += 0.01) {
    const double v = tx_rate(1e5, pw, 1e-6, 3.98e-21);
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("uplink rate is concave in power") {
  Rng rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 500; ++k) {
    const double b = 1e4 + 1e6 * u(rng), g = 1e-7 + 1e-6 * u(rng);
    const double p1 = u(rng), p2 = u(rng);
    const double mid = tx_rate(b, 0.5 * (p1 + p2), g, 3.98e-21);
    const double avg = 0.5 * (tx_rate(b, p1, g, 3.98e-21) + tx_rate(b, p2, g, 3.98e-21));
    CHECK(mid >= avg * (1 - 1e-12));
  }
}

TEST_CASE("rate inversion round trip") {
  CHECK(invert_rate(0.0, 1e5, 1e-6, 3.98e-21) == 0.0);
  CHECK(invert_rate(2.79e6, 1e5, 1e-6, 3.98e-21) == Approx(0.1).epsilon(0.05));
  Rng rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 1000; ++k) {
    const double b = 1e4 + 2e6 * u(rng), g = 1e-7 * std::pow(10.0, u(rng)), pw = 1e-3 + u(rng);
    const double v = tx_rate(b, pw, g, 3.98e-21);
    CHECK(invert_rate(v, b, g, 3.98e-21) == Approx(pw).epsilon(1e-9));
  }
}

TEST_CASE("upload time and energy") {
  auto zero = tx_time_energy(0.0, 0.3, 0.0);
  REQUIRE(zero);
  CHECK(zero->time == 0.0);
  CHECK(zero->energy == 0.0);
  auto c = tx_time_energy(1e6, 0.1, 2e6);
  REQUIRE(c);
  CHECK(c->time == Approx(0.5));
  CHECK(c->energy == Approx(0.05));
  CHECK(c->energy == Approx(0.1 * 1e6 / 2e6).epsilon(1e-15));
  CHECK_FALSE(tx_time_energy(1e6, 0.0, 0.0));
}

TEST_CASE("round totals") {
  std::vector<DeviceCost> one{{1.0, 2.0, 0.1, 0.2}};
  CHECK(round_totals(one).energy == Approx(0.3));
  CHECK(round_totals(one).time == Approx(3.0));
  std::vector<DeviceCost> two{{1.0, 2.0, 0.1, 0.2}, {4.0, 1.0, 0.3, 0.4}};
  CHECK(round_totals(two).energy == Approx(1.0));
  CHECK(round_totals(two).time == Approx(5.0));
  std::reverse(two.begin(), two.end());
  CHECK(round_totals(two).energy == Approx(1.0));
  CHECK(round_totals(two).time == Approx(5.0));
}

TEST_CASE("channel sampling") {
  Rng rng(1);
  ChannelState flat = sample_channel(rng, 6, 3e-7, 3e-7);
  CHECK((flat.gains.array() == 3e-7).all());

  ChannelState def = sample_channel(rng, 1000, 1e-7, 1e-6);
  CHECK(def.gains.minCoeff() >= 1e-7);
  CHECK(def.gains.maxCoeff() <= 1e-6);

  ChannelState big = sample_channel(rng, 100000, 1e-7, 1e-6);
  std::vector<double> g(big.gains.data(), big.gains.data() + big.gains.size());
  std::nth_element(g.begin(), g.begin() + g.size() / 2, g.end());
  CHECK(g[g.size() / 2] == Approx(std::sqrt(1e-7 * 1e-6)).epsilon(0.03));
}

TEST_CASE("noise density conversion") {
  CHECK(dbm_per_hz_to_watts(-174) == Approx(3.98e-21).epsilon(1e-3));
}
