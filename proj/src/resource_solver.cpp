// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0

#include "wfl/resource_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace wfl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTimeSlack = 1e-9;
constexpr double kTauTol = 1e-9;

DeviceCost cost_at(const DeviceProfile& prof, int iters, double f, double p, double bw, double gain,
                   double n0) {
  const double w = workload_cycles(prof.cycles_per_sample, prof.data_size, iters);
  DeviceCost c;
  c.t_cmp = compute_time(w, f);
  c.e_cmp = compute_energy(prof.kappa, w, f);
  if (prof.model_bits > 0) {
    const double v = tx_rate(bw, p, gain, n0);
    c.t_com = v > 0 ? prof.model_bits / v : kInf;
    c.e_com = p * c.t_com;
  }
  return c;
}

void check_selection(std::span<const int> selection, std::size_t num_devices) {
  require(!selection.empty(), "allocate: empty selection");
  std::set<int> seen;
  for (int n : selection) {
    require(n >= 0 && static_cast<std::size_t>(n) < num_devices, "allocate: device index out of range");
    require(seen.insert(n).second, "allocate: repeated device in selection");
  }
}

}  // namespace

double golden_section_min(const std::function<double(double)>& f, double lo, double hi, double tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return fc <= fd ? c : d;
}

std::optional<DeviceSolution> min_device_energy(const DeviceProfile& prof, double bandwidth,
                                                double gain, const SystemConfig& sys) {
  require(bandwidth > 0, "min_device_energy: bandwidth must be positive");
  const double T = sys.qos_time;
  const double w = workload_cycles(prof.cycles_per_sample, prof.data_size, sys.local_iters);
  const double s = prof.model_bits;
  const double tau_lo = w / prof.f_max;
  double tau_hi = T;
  if (s > 0) tau_hi = T - s / tx_rate(bandwidth, prof.p_max, gain, sys.noise_psd);
  if (!(tau_lo <= tau_hi) || T <= 0) return std::nullopt;

  const double cmp_coef = prof.kappa * w * w * w;
  auto power_at = [&](double tau) {
    if (s <= 0) return 0.0;
    const double p = invert_rate(s / (T - tau), bandwidth, gain, sys.noise_psd);
    return std::min(p, prof.p_max);
  };
  auto h = [&](double tau) {
    const double e_cmp = cmp_coef / (tau * tau);
    if (s <= 0) return e_cmp;
    return e_cmp + power_at(tau) * (T - tau);
  };

  double best_tau = tau_hi;
  if (tau_hi > tau_lo) {
    best_tau = golden_section_min(h, tau_lo, tau_hi, kTauTol);
    for (double end : {tau_lo, tau_hi}) {
      if (h(end) < h(best_tau)) best_tau = end;
    }
  }

  DeviceSolution sol;
  sol.freq = std::min(w / best_tau, prof.f_max);
  sol.power = power_at(best_tau);
  sol.cost = cost_at(prof, sys.local_iters, sol.freq, sol.power, bandwidth, gain, sys.noise_psd);
  sol.energy = sol.cost.energy();
  if (!(sol.cost.time() <= T + kTimeSlack)) return std::nullopt;
  return sol;
}

std::optional<DeviceSolution> brute_force_device_oracle(const DeviceProfile& prof, double bandwidth,
                                                        double gain, const SystemConfig& sys,
                                                        int grid, int refinements) {
  require(grid >= 100, "brute_force_device_oracle: grid must be >= 100");
  require(bandwidth > 0, "brute_force_device_oracle: bandwidth must be positive");
  const double T = sys.qos_time;
  const double w = workload_cycles(prof.cycles_per_sample, prof.data_size, sys.local_iters);
  const double s = prof.model_bits;
  auto e_cmp_at = [&](double f) { return prof.kappa * w * f * f; };
  auto t_com_at = [&](double p) { return s > 0 ? s / tx_rate(bandwidth, p, gain, sys.noise_psd) : 0.0; };

  std::vector<double> t_cmp(grid), e_cmp(grid), t_com(grid), e_com(grid);
  double f_lo = 0, f_hi = prof.f_max, p_lo = 0, p_hi = prof.p_max;
  std::optional<DeviceSolution> best;

  for (int pass = 0; pass <= refinements; ++pass) {
    const double df = (f_hi - f_lo) / grid;
    const double dp = (p_hi - p_lo) / grid;
    for (int i = 0; i < grid; ++i) {
      const double f = f_lo + df * (i + 1);
      t_cmp[i] = w / f;
      e_cmp[i] = e_cmp_at(f);
      const double p = p_lo + dp * (i + 1);
      t_com[i] = t_com_at(p);
      e_com[i] = p * t_com[i];
    }
    int bi = -1, bj = -1;
    double best_e = best ? best->energy : kInf;
    for (int i = 0; i < grid; ++i) {
      const double budget = T - t_cmp[i];
      if (budget < 0) continue;
      for (int j = 0; j < grid; ++j) {
        if (t_com[j] <= budget && e_cmp[i] + e_com[j] < best_e) {
          best_e = e_cmp[i] + e_com[j];
          bi = i;
          bj = j;
        }
      }
    }
    if (bi >= 0) {
      DeviceSolution sol;
      sol.freq = f_lo + df * (bi + 1);
      sol.power = p_lo + dp * (bj + 1);
      sol.cost = cost_at(prof, sys.local_iters, sol.freq, sol.power, bandwidth, gain, sys.noise_psd);
      sol.energy = sol.cost.energy();
      best = sol;
    }
    if (!best || pass == refinements) break;

    // Next box: every grid point within two one-cell energy steps of the
    // incumbent, padded by a cell. The optimum lies on the deadline curve,
    // where the energy valley can be long and flat.
    const double step = (e_cmp_at(best->freq + df) - e_cmp_at(best->freq)) +
                        std::abs((best->power + dp) * t_com_at(best->power + dp) - best->cost.e_com);
    const double cut = best->energy + 2.0 * step;
    int i_lo = grid, i_hi = -1, j_lo = grid, j_hi = -1;
    for (int i = 0; i < grid; ++i) {
      const double budget = T - t_cmp[i];
      if (budget < 0) continue;
      for (int j = 0; j < grid; ++j) {
        if (t_com[j] <= budget && e_cmp[i] + e_com[j] <= cut) {
          i_lo = std::min(i_lo, i);
          i_hi = std::max(i_hi, i);
          j_lo = std::min(j_lo, j);
          j_hi = std::max(j_hi, j);
        }
      }
    }
    const double nf_lo = std::max(0.0, f_lo + df * i_lo);
    const double nf_hi = std::min(prof.f_max, f_lo + df * (i_hi + 2));
    const double np_lo = std::max(0.0, p_lo + dp * j_lo);
    const double np_hi = std::min(prof.p_max, p_lo + dp * (j_hi + 2));
    f_lo = std::min(nf_lo, best->freq - df);
    f_hi = std::max(nf_hi, best->freq);
    p_lo = std::min(np_lo, best->power - dp);
    p_hi = std::max(np_hi, best->power);
    f_lo = std::max(0.0, f_lo);
    p_lo = std::max(0.0, p_lo);
  }
  return best;
}

std::optional<double> min_feasible_bandwidth(const DeviceProfile& prof, double gain,
                                             const SystemConfig& sys, double upper) {
  const double w = workload_cycles(prof.cycles_per_sample, prof.data_size, sys.local_iters);
  const double budget = sys.qos_time - w / prof.f_max;
  if (budget <= 0) return std::nullopt;
  if (prof.model_bits <= 0) return 0.0;
  auto ok = [&](double b) {
    return prof.model_bits / tx_rate(b, prof.p_max, gain, sys.noise_psd) <= budget;
  };
  if (!ok(upper)) return std::nullopt;
  double lo = 0, hi = upper;
  for (int it = 0; it < 200 && hi - lo > 1e-12 * upper; ++it) {
    const double mid = 0.5 * (lo + hi);
    (ok(mid) ? hi : lo) = mid;
  }
  return hi;
}

namespace {

ResourceAllocation allocate_with(std::span<const int> selection, std::span<const DeviceProfile> profiles,
                                 const ChannelState& channel, const SystemConfig& sys,
                                 std::span<const double> bandwidths) {
  ResourceAllocation out;
  out.feasible = true;
  std::vector<DeviceCost> costs;
  for (std::size_t k = 0; k < selection.size(); ++k) {
    const int n = selection[k];
    DeviceAllocation da;
    da.device = n;
    da.bandwidth = bandwidths[k];
    auto sol = bandwidths[k] > 0
                   ? min_device_energy(profiles[n], bandwidths[k], channel.gains[n], sys)
                   : std::nullopt;
    if (!sol) {
      out.feasible = false;
    } else {
      da.freq = sol->freq;
      da.power = sol->power;
      da.cost = sol->cost;
    }
    costs.push_back(da.cost);
    out.devices.push_back(da);
  }
  if (out.feasible) out.totals = round_totals(costs);
  return out;
}

}  // namespace

ResourceAllocation allocate(std::span<const int> selection, std::span<const DeviceProfile> profiles,
                            const ChannelState& channel, const SystemConfig& sys, BandwidthMode mode) {
  if (mode == BandwidthMode::Optimized) return optimize_bandwidth(selection, profiles, channel, sys);
  check_selection(selection, profiles.size());
  require(channel.gains.size() == static_cast<Eigen::Index>(profiles.size()),
          "allocate: channel size does not match device count");
  std::vector<double> bw(selection.size(), sys.bandwidth / static_cast<double>(selection.size()));
  return allocate_with(selection, profiles, channel, sys, bw);
}

ResourceAllocation optimize_bandwidth(std::span<const int> selection,
                                      std::span<const DeviceProfile> profiles,
                                      const ChannelState& channel, const SystemConfig& sys,
                                      BandwidthSearch search, std::vector<double>* trace) {
  ResourceAllocation start = allocate(selection, profiles, channel, sys, BandwidthMode::EqualSplit);
  const std::size_t k = selection.size();
  if (!start.feasible) {
    // Start from the per-device minimum shares plus an equal part of the slack.
    std::vector<double> need(k);
    double sum = 0;
    for (std::size_t i = 0; i < k; ++i) {
      auto b = min_feasible_bandwidth(profiles[selection[i]], channel.gains[selection[i]], sys, sys.bandwidth);
      if (!b) return start;
      sum += need[i] = *b;
    }
    if (sum > sys.bandwidth) return start;
    for (auto& b : need) b += (sys.bandwidth - sum) / static_cast<double>(k);
    start = allocate_with(selection, profiles, channel, sys, need);
    if (!start.feasible) return start;
  }
  if (k == 1) {
    if (trace) trace->push_back(start.totals.energy);
    return start;
  }

  std::vector<double> bw(k), energy(k);
  for (std::size_t i = 0; i < k; ++i) {
    bw[i] = start.devices[i].bandwidth;
    energy[i] = start.devices[i].cost.energy();
  }
  auto dev_energy = [&](std::size_t i, double b) {
    const int n = selection[i];
    auto sol = min_device_energy(profiles[n], b, channel.gains[n], sys);
    return sol ? sol->energy : kInf;
  };
  auto total = [&] {
    double e = 0;
    for (double x : energy) e += x;
    return e;
  };
  double current = total();
  if (trace) trace->push_back(current);

  for (int it = 0; it < search.max_iters; ++it) {
    const double before = current;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = i + 1; j < k; ++j) {
        const double pool = bw[i] + bw[j];
        const int ni = selection[i], nj = selection[j];
        auto lo_i = min_feasible_bandwidth(profiles[ni], channel.gains[ni], sys, pool);
        auto lo_j = min_feasible_bandwidth(profiles[nj], channel.gains[nj], sys, pool);
        if (!lo_i || !lo_j) continue;
        const double lo = std::max(*lo_i, pool * 1e-12), hi = pool - std::max(*lo_j, pool * 1e-12);
        if (!(hi > lo)) continue;
        auto pair_energy = [&](double x) { return dev_energy(i, x) + dev_energy(j, pool - x); };
        double x = golden_section_min(pair_energy, lo, hi, 1e-9 * sys.bandwidth);
        for (double end : {lo, hi}) {
          if (pair_energy(end) < pair_energy(x)) x = end;
        }
        const double ei = dev_energy(i, x), ej = dev_energy(j, pool - x);
        if (ei + ej < energy[i] + energy[j]) {
          bw[i] = x;
          bw[j] = pool - x;
          energy[i] = ei;
          energy[j] = ej;
        }
      }
    }
    current = total();
    if (trace) trace->push_back(current);
    if (before - current < search.tol) break;
  }
  return allocate_with(selection, profiles, channel, sys, bw);
}

bool feasibility(std::span<const int> selection, std::span<const DeviceProfile> profiles,
                 const ChannelState& channel, const SystemConfig& sys) {
  return allocate(selection, profiles, channel, sys, BandwidthMode::EqualSplit).feasible;
}

}  // namespace wfl
