// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0
//
// Minimum-energy CPU frequency, transmit power and bandwidth for a fixed
// device subset under the round deadline. Infeasibility is a value, not an
// exception: the environment turns it into the penalty reward.

#pragma once

#include "wfl/wireless.hpp"

#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace wfl {

struct DeviceSolution {
  double freq = 0;
  double power = 0;
  double energy = 0;
  DeviceCost cost;
};

struct DeviceAllocation {
  int device = -1;
  double freq = 0;
  double power = 0;
  double bandwidth = 0;
  DeviceCost cost;
};

struct ResourceAllocation {
  bool feasible = false;
  std::vector<DeviceAllocation> devices;  // in selection order
  RoundTotals totals;
};

enum class BandwidthMode { EqualSplit, Optimized };

/// Minimizes E_cmp + E_com for one device on a link of `bandwidth` Hz.
///
/// The search runs over the compute-time share tau of the deadline: the
/// frequency is W/tau and the power is the smallest one that uploads s_n bits
/// in the remaining T_QoS - tau. The objective is convex in tau; golden-section
/// search is still cross-checked against both interval endpoints.
std::optional<DeviceSolution> min_device_energy(const DeviceProfile& profile, double bandwidth,
                                                double gain, const SystemConfig& sys);

/// Exhaustive (f, p) grid search used as an independent oracle. Each
/// refinement pass re-grids, at the same resolution, the bounding box of the
/// grid points whose energy is within two cell steps of the incumbent.
std::optional<DeviceSolution> brute_force_device_oracle(const DeviceProfile& profile,
                                                        double bandwidth, double gain,
                                                        const SystemConfig& sys, int grid,
                                                        int refinements = 0);

/// Smallest bandwidth on which the device can still meet the deadline at full
/// power and frequency, or nullopt if it misses it even with `upper` Hz.
std::optional<double> min_feasible_bandwidth(const DeviceProfile& profile, double gain,
                                             const SystemConfig& sys, double upper);

ResourceAllocation allocate(std::span<const int> selection, std::span<const DeviceProfile> profiles,
                            const ChannelState& channel, const SystemConfig& sys,
                            BandwidthMode mode = BandwidthMode::EqualSplit);

struct BandwidthSearch {
  int max_iters = 200;
  double tol = 1e-6;  // J, per sweep
};

/// Pairwise coordinate descent on the bandwidth split, starting from the equal
/// split, or from the minimum feasible shares when the equal split misses the
/// deadline. The per-sweep total energy is appended to `trace` when given.
ResourceAllocation optimize_bandwidth(std::span<const int> selection,
                                      std::span<const DeviceProfile> profiles,
                                      const ChannelState& channel, const SystemConfig& sys,
                                      BandwidthSearch search = {},
                                      std::vector<double>* trace = nullptr);

/// True iff the equal-split allocation meets every constraint.
bool feasibility(std::span<const int> selection, std::span<const DeviceProfile> profiles,
                 const ChannelState& channel, const SystemConfig& sys);

/// Golden-section minimization of a unimodal function on [lo, hi].
double golden_section_min(const std::function<double(double)>& f, double lo, double hi,
                          double tol);

}  // namespace wfl
