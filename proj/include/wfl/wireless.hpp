// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0
//
// Per-device computation and uplink cost model. The scalar formulas are
// templated so they can be evaluated in any floating type; the checked
// wrappers below validate operating points.

#pragma once

#include "wfl/core.hpp"

#include <cmath>
#include <optional>
#include <span>

namespace wfl {

/// Static capabilities of one device.
struct DeviceProfile {
  double f_max = 2e9;               // Hz
  double p_max = 0.5;               // W
  double model_bits = 1e6;          // s_n, bits uploaded per round
  double data_size = 1000;          // |D_n|, samples
  double cycles_per_sample = 7e5;   // C
  double kappa = 1e-28;             // effective switched capacitance

  void validate() const;
};

struct SystemConfig {
  double bandwidth = 2e6;       // B, Hz
  double noise_psd = 3.98e-21;  // N0, W/Hz
  double qos_time = 15.0;       // T_QoS, s
  int num_rounds = 20;          // K
  double sigma = 0.8;           // reward weight
  int local_iters = 5;          // I
  double gain_lo = 1e-7;
  double gain_hi = 1e-6;

  void validate() const;
};

/// Power gains G_{t,n} for every device in one round.
struct ChannelState {
  Vector gains;
};

/// Converts a noise density in dBm/Hz to W/Hz.
inline double dbm_per_hz_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

template <typename Scalar>
Scalar workload_cycles(Scalar cycles_per_sample, Scalar data_size, int local_iters) {
  return cycles_per_sample * data_size * Scalar(local_iters);
}

template <typename Scalar>
Scalar compute_time(Scalar cycles, Scalar f) {
  return cycles / f;
}

template <typename Scalar>
Scalar compute_energy(Scalar kappa, Scalar cycles, Scalar f) {
  return kappa * cycles * f * f;
}

/// Shannon rate of an FDMA uplink: B log2(1 + pG / (N0 B)).
template <typename Scalar>
Scalar tx_rate(Scalar bandwidth, Scalar power, Scalar gain, Scalar noise_psd) {
  using std::log1p;
  return bandwidth * log1p(power * gain / (noise_psd * bandwidth)) / Scalar(M_LN2);
}

/// Transmit power needed to reach `rate` on the given link.
template <typename Scalar>
Scalar invert_rate(Scalar rate, Scalar bandwidth, Scalar gain, Scalar noise_psd) {
  using std::expm1;
  return noise_psd * bandwidth / gain * expm1(Scalar(M_LN2) * rate / bandwidth);
}

// Checked forms.
double compute_time(const DeviceProfile& profile, int local_iters, double f);
double compute_energy(const DeviceProfile& profile, int local_iters, double f);

struct UplinkCost {
  double time = 0;    // s
  double energy = 0;  // J
};

/// Upload time and energy; nullopt when the rate is zero but bits remain.
std::optional<UplinkCost> tx_time_energy(double bits, double power, double rate);

struct DeviceCost {
  double t_cmp = 0;
  double t_com = 0;
  double e_cmp = 0;
  double e_com = 0;

  double time() const { return t_cmp + t_com; }
  double energy() const { return e_cmp + e_com; }
};

struct RoundTotals {
  double energy = 0;  // E_t, J
  double time = 0;    // T_t, s
};

/// E_t sums all device energies; T_t is the slowest device.
RoundTotals round_totals(std::span<const DeviceCost> per_device);

/// I.i.d. log-uniform gains on [lo, hi].
ChannelState sample_channel(Rng& rng, int num_devices, double lo, double hi);

}  // namespace wfl
