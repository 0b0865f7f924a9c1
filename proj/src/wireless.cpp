// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0

#include "wfl/wireless.hpp"

#include <algorithm>
#include <limits>

namespace wfl {

void DeviceProfile::validate() const {
  require(f_max > 0 && f_max <= 1e11, "DeviceProfile: f_max must be in (0, 1e11]");
  require(p_max > 0 && p_max <= 100, "DeviceProfile: p_max must be in (0, 100]");
  require(model_bits > 0, "DeviceProfile: model_bits must be positive");
  require(data_size > 0, "DeviceProfile: data_size must be positive");
  require(cycles_per_sample > 0, "DeviceProfile: cycles_per_sample must be positive");
  require(kappa > 0, "DeviceProfile: kappa must be positive");
}

void SystemConfig::validate() const {
  require(bandwidth > 0, "SystemConfig: bandwidth must be positive");
  require(noise_psd > 0, "SystemConfig: noise_psd must be positive");
  require(qos_time >= 0, "SystemConfig: qos_time must be non-negative");
  require(num_rounds >= 1, "SystemConfig: num_rounds must be >= 1");
  require(sigma >= 0 && sigma <= 1, "SystemConfig: sigma must be in [0, 1]");
  require(local_iters >= 1, "SystemConfig: local_iters must be >= 1");
  require(gain_lo > 0 && gain_lo <= gain_hi, "SystemConfig: need 0 < gain_lo <= gain_hi");
}

namespace {

void check_frequency(const DeviceProfile& profile, double f) {
  if (!(f > 0 && f <= profile.f_max)) {
    throw InvalidArgument("CPU frequency outside (0, f_max]");
  }
}

}  // namespace

double compute_time(const DeviceProfile& profile, int local_iters, double f) {
  check_frequency(profile, f);
  return compute_time(workload_cycles(profile.cycles_per_sample, profile.data_size, local_iters), f);
}

double compute_energy(const DeviceProfile& profile, int local_iters, double f) {
  check_frequency(profile, f);
  return compute_energy(profile.kappa,
                        workload_cycles(profile.cycles_per_sample, profile.data_size, local_iters), f);
}

std::optional<UplinkCost> tx_time_energy(double bits, double power, double rate) {
  if (bits == 0) return UplinkCost{};
  if (!(rate > 0)) return std::nullopt;
  const double t = bits / rate;
  return UplinkCost{t, power * t};
}

RoundTotals round_totals(std::span<const DeviceCost> per_device) {
  require(!per_device.empty(), "round_totals: empty device list");
  RoundTotals out;
  for (const auto& c : per_device) {
    out.energy += c.energy();
    out.time = std::max(out.time, c.time());
  }
  return out;
}

ChannelState sample_channel(Rng& rng, int num_devices, double lo, double hi) {
  require(lo > 0 && lo <= hi, "sample_channel: need 0 < lo <= hi");
  require(num_devices >= 0, "sample_channel: negative device count");
  ChannelState ch;
  ch.gains.resize(num_devices);
  if (lo == hi) {
    ch.gains.setConstant(lo);
    return ch;
  }
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  for (int n = 0; n < num_devices; ++n) {
    ch.gains[n] = std::clamp(std::exp(u(rng)), lo, hi);
  }
  return ch;
}

}  // namespace wfl
