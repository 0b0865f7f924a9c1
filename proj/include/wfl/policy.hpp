// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0
//
// Device-selection policies: an autoregressive masked token policy over
// device indices, the random and utility-greedy baselines, and a client for
// an external language-model process.

#pragma once

#include "wfl/environment.hpp"
#include "wfl/mlp.hpp"
#include "wfl/virtual_env.hpp"

#include <chrono>
#include <span>
#include <string>
#include <vector>

namespace wfl {

/// Per device [l_n, log |D_n|, log G, f_max, p_max, last E_cmp, last E_com,
/// selected last round], then [previous accuracy, t/K]. Length 8N + 2.
Vector encode_observation(const Observation& obs);

struct MaskedDistribution {
  Vector probs;     // exactly 0 outside the valid set
  Vector logprobs;  // -inf outside the valid set
};

/// Softmax restricted to tokens with valid[v] set.
MaskedDistribution masked_logits(const Vector& raw, const std::vector<bool>& valid);

/// Network from [normalized observation | picked so far | step one-hot] to N
/// device logits.
class PolicyNet {
 public:
  PolicyNet() = default;
  PolicyNet(int num_devices, int select_count, std::vector<int> hidden = {128, 128});

  int num_devices() const { return num_devices_; }
  int select_count() const { return select_count_; }
  int obs_dim() const { return 8 * num_devices_ + 2; }
  int input_dim() const { return obs_dim() + num_devices_ + select_count_; }
  const Mlp<double>& net() const { return net_; }
  const std::vector<int>& hidden() const { return hidden_; }

  Vector init(Rng& rng) const { return net_.init(rng, 0.01); }
  /// Freezes the observation z-score from a set of encoded observations.
  void fit_normalizer(std::span<const Vector> encoded);
  Vector normalize(const Vector& encoded) const { return obs_norm.normalize(encoded); }

  /// Network inputs for each prefix of `selection` (one column per token).
  Matrix token_inputs(const Vector& normalized_obs, std::span<const int> selection) const;

  void save(const std::string& path, const Vector& params, const std::string& fingerprint = "") const;
  static PolicyNet load(const std::string& path, Vector& params, std::string* fingerprint = nullptr);

  Normalizer obs_norm;

 private:
  int num_devices_ = 0;
  int select_count_ = 0;
  std::vector<int> hidden_;
  Mlp<double> net_;
};

struct SampledAction {
  Selection selection;
  double logprob = 0;
};

/// Draws `m` distinct devices token by token; each drawn device leaves the
/// valid set.
SampledAction sample_action(const PolicyNet& policy, const Vector& params, const Observation& obs,
                            int m, Rng& rng);

/// Greedy decoding (argmax at every step).
Selection greedy_action(const PolicyNet& policy, const Vector& params, const Observation& obs, int m);

/// Sum of masked token log-probabilities along `selection`. When `grad` is
/// given, adds coeff * d logprob / d params to it.
double logprob(const PolicyNet& policy, const Vector& params, const Observation& obs,
               std::span<const int> selection, Vector* grad = nullptr, double coeff = 1.0);

/// Same, on an already normalized observation vector.
double logprob_encoded(const PolicyNet& policy, const Vector& params, const Vector& normalized_obs,
                       std::span<const int> selection, Vector* grad = nullptr, double coeff = 1.0);

/// Uniform m-subset, returned in increasing order.
Selection select_random(int num_devices, int m, Rng& rng);

/// Per-device minimum energy at the equal bandwidth share B/m; +inf when the
/// device cannot meet the deadline alone on that share.
Vector equal_split_energies(std::span<const DeviceProfile> profiles, const ChannelState& channel,
                            const SystemConfig& sys, int m);

/// Utility u_n = l_n sqrt(|D_n|) / (1 + E_n). Slots are filled in utility
/// order; each slot is replaced by a uniformly drawn unused device with
/// probability eps.
Selection select_epsilon_greedy(const Observation& obs, const Vector& known_costs, double eps, Rng& rng);

// External backend ---------------------------------------------------------

class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BackendTimeout : public BackendError {
 public:
  using BackendError::BackendError;
};
class BackendMalformed : public BackendError {
 public:
  using BackendError::BackendError;
};
class BackendOutOfRange : public BackendError {
 public:
  using BackendError::BackendError;
};

/// Parses "3,1,4": exactly m distinct integers in [0, N). Throws
/// BackendMalformed or BackendOutOfRange.
Selection parse_selection(const std::string& text, int m, int num_devices);

/// Spawned process speaking newline-delimited JSON on stdin/stdout.
/// Request: {"id":k,"prompt":...,"m":m,"N":N}. Response: {"id":k,"selection_text":"..."}.
class ProcessBackend {
 public:
  explicit ProcessBackend(std::vector<std::string> argv,
                          std::chrono::milliseconds timeout = std::chrono::seconds(30));
  ~ProcessBackend();
  ProcessBackend(const ProcessBackend&) = delete;
  ProcessBackend& operator=(const ProcessBackend&) = delete;

  /// Sends the prompt, retries once on a malformed reply.
  Selection query(const std::string& prompt, int m, int num_devices);

 private:
  std::string exchange(const std::string& line);

  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  std::chrono::milliseconds timeout_;
  long next_id_ = 0;
};

Selection query_backend(ProcessBackend& backend, const std::string& prompt, int m, int num_devices);

}  // namespace wfl
