// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0

#include "wfl/policy.hpp"

#include "wfl/resource_solver.hpp"

#include <json.hpp>

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

extern char** environ;

namespace wfl {

Vector encode_observation(const Observation& obs) {
  const int n = obs.num_devices();
  Vector x(8 * n + 2);
  for (int i = 0; i < n; ++i) {
    x.segment(8 * i, 8) << obs.stats.global_loss[i], std::log(std::max(obs.stats.data_size[i], 1.0)),
        std::log(obs.sys.gains[i]), obs.sys.f_max[i], obs.sys.p_max[i], obs.sys.last_e_cmp[i],
        obs.sys.last_e_com[i], obs.stats.selected[i] ? 1.0 : 0.0;
  }
  x[8 * n] = obs.stats.prev_accuracy;
  x[8 * n + 1] = obs.num_rounds > 0 ? static_cast<double>(obs.round) / obs.num_rounds : 0.0;
  return x;
}

MaskedDistribution masked_logits(const Vector& raw, const std::vector<bool>& valid) {
  require(raw.size() == static_cast<Eigen::Index>(valid.size()), "masked_logits: size mismatch");
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  double zmax = kNegInf;
  for (Eigen::Index v = 0; v < raw.size(); ++v) {
    if (valid[v]) zmax = std::max(zmax, raw[v]);
  }
  require(zmax > kNegInf, "masked_logits: empty valid set");
  double sum = 0;
  for (Eigen::Index v = 0; v < raw.size(); ++v) {
    if (valid[v]) sum += std::exp(raw[v] - zmax);
  }
  const double lse = zmax + std::log(sum);
  MaskedDistribution d;
  d.probs = Vector::Zero(raw.size());
  d.logprobs = Vector::Constant(raw.size(), kNegInf);
  for (Eigen::Index v = 0; v < raw.size(); ++v) {
    if (!valid[v]) continue;
    d.logprobs[v] = raw[v] - lse;
    d.probs[v] = std::exp(d.logprobs[v]);
  }
  return d;
}

PolicyNet::PolicyNet(int num_devices, int select_count, std::vector<int> hidden)
    : num_devices_(num_devices), select_count_(select_count), hidden_(std::move(hidden)) {
  require(num_devices >= 1, "PolicyNet: need at least one device");
  require(select_count >= 1 && select_count <= num_devices, "PolicyNet: select_count must be in [1, N]");
  std::vector<int> sizes{input_dim()};
  sizes.insert(sizes.end(), hidden_.begin(), hidden_.end());
  sizes.push_back(num_devices_);
  net_ = Mlp<double>(sizes);
  obs_norm = {Vector::Zero(obs_dim()), Vector::Ones(obs_dim())};
}

void PolicyNet::fit_normalizer(std::span<const Vector> encoded) {
  require(!encoded.empty(), "PolicyNet::fit_normalizer: no observations");
  Matrix m(obs_dim(), encoded.size());
  for (std::size_t i = 0; i < encoded.size(); ++i) m.col(i) = encoded[i];
  obs_norm = Normalizer::fit(m);
}

Matrix PolicyNet::token_inputs(const Vector& nobs, std::span<const int> selection) const {
  require(nobs.size() == obs_dim(), "PolicyNet: observation dimension mismatch");
  require(static_cast<int>(selection.size()) <= select_count_, "PolicyNet: selection longer than m");
  const int steps = std::max<int>(1, static_cast<int>(selection.size()));
  Matrix x = Matrix::Zero(input_dim(), steps);
  for (int j = 0; j < steps; ++j) {
    x.col(j).head(obs_dim()) = nobs;
    for (int k = 0; k < j; ++k) x(obs_dim() + selection[k], j) = 1.0;
    x(obs_dim() + num_devices_ + j, j) = 1.0;
  }
  return x;
}

void PolicyNet::save(const std::string& path, const Vector& params, const std::string& fingerprint) const {
  require(params.size() == net_.num_params(), "PolicyNet::save: parameter size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("PolicyNet::save: cannot open " + path);
  f.imbue(std::locale::classic());
  f.precision(17);
  f << "wflsel-policy 1\nfingerprint " << (fingerprint.empty() ? "-" : fingerprint) << "\ndevices "
    << num_devices_ << "\nselect " << select_count_ << "\nhidden " << hidden_.size();
  for (int h : hidden_) f << ' ' << h;
  f << "\nparams " << params.size() << "\nobs_mean";
  for (double v : obs_norm.mean) f << ' ' << v;
  f << "\nobs_scale";
  for (double v : obs_norm.scale) f << ' ' << v;
  f << "\nend_header\n";
  f.write(reinterpret_cast<const char*>(params.data()), static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!f) throw std::runtime_error("PolicyNet::save: write failed for " + path);
}

PolicyNet PolicyNet::load(const std::string& path, Vector& params, std::string* fingerprint) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("PolicyNet::load: cannot open " + path);
  f.imbue(std::locale::classic());
  std::string magic, key, fp;
  int version = 0, n = 0, m = 0, nh = 0;
  Eigen::Index np = 0;
  f >> magic >> version;
  require(magic == "wflsel-policy" && version == 1, "PolicyNet::load: not a policy file");
  f >> key >> fp >> key >> n >> key >> m >> key >> nh;
  if (fingerprint) *fingerprint = fp == "-" ? "" : fp;
  std::vector<int> hidden(nh);
  for (auto& h : hidden) f >> h;
  f >> key >> np;
  PolicyNet p(n, m, hidden);
  require(np == p.net_.num_params(), "PolicyNet::load: parameter count mismatch");
  f >> key;
  for (auto& v : p.obs_norm.mean) f >> v;
  f >> key;
  for (auto& v : p.obs_norm.scale) f >> v;
  f >> key;
  require(key == "end_header" && bool(f), "PolicyNet::load: malformed header");
  f.get();
  params.resize(np);
  f.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(np * sizeof(double)));
  require(bool(f), "PolicyNet::load: truncated parameters");
  return p;
}

namespace {

int draw(const Vector& probs, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng);
  double acc = 0;
  int last = -1;
  for (Eigen::Index v = 0; v < probs.size(); ++v) {
    if (probs[v] <= 0) continue;
    last = static_cast<int>(v);
    acc += probs[v];
    if (r < acc) return last;
  }
  return last;
}

template <typename Pick>
SampledAction decode(const PolicyNet& policy, const Vector& params, const Observation& obs, int m, Pick pick) {
  require(m >= 1 && m <= policy.num_devices(), "sample_action: m must be in [1, N]");
  require(m <= policy.select_count(), "sample_action: m exceeds the policy's selection size");
  require(obs.num_devices() == policy.num_devices(), "sample_action: device count mismatch");
  const Vector nobs = policy.normalize(encode_observation(obs));
  SampledAction out;
  std::vector<bool> valid(policy.num_devices(), true);
  for (int j = 0; j < m; ++j) {
    // Step j sees the first j picks and the step index j.
    Matrix col = Matrix::Zero(policy.input_dim(), 1);
    col.col(0).head(policy.obs_dim()) = nobs;
    for (int d : out.selection) col(policy.obs_dim() + d, 0) = 1.0;
    col(policy.obs_dim() + policy.num_devices() + j, 0) = 1.0;
    const Vector logits = policy.net().forward(params, col).col(0);
    const MaskedDistribution dist = masked_logits(logits, valid);
    const int v = pick(dist);
    out.logprob += dist.logprobs[v];
    out.selection.push_back(v);
    valid[v] = false;
  }
  return out;
}

}  // namespace

SampledAction sample_action(const PolicyNet& policy, const Vector& params, const Observation& obs,
                            int m, Rng& rng) {
  return decode(policy, params, obs, m, [&](const MaskedDistribution& d) { return draw(d.probs, rng); });
}

Selection greedy_action(const PolicyNet& policy, const Vector& params, const Observation& obs, int m) {
  return decode(policy, params, obs, m, [](const MaskedDistribution& d) {
           Eigen::Index best = 0;
           d.probs.maxCoeff(&best);
           return static_cast<int>(best);
         }).selection;
}

double logprob_encoded(const PolicyNet& policy, const Vector& params, const Vector& nobs,
                       std::span<const int> selection, Vector* grad, double coeff) {
  require(!selection.empty(), "logprob: empty selection");
  const int n = policy.num_devices();
  std::vector<bool> valid(n, true);
  for (int d : selection) {
    require(d >= 0 && d < n, "logprob: device index out of range");
    require(valid[d], "logprob: repeated device in selection");
    valid[d] = false;
  }
  std::fill(valid.begin(), valid.end(), true);
  const Matrix x = policy.token_inputs(nobs, selection);
  typename Mlp<double>::Cache cache;
  const Matrix logits = policy.net().forward(params, x, grad ? &cache : nullptr);
  Matrix up;
  if (grad) up = Matrix::Zero(n, x.cols());
  double lp = 0;
  for (std::size_t j = 0; j < selection.size(); ++j) {
    const MaskedDistribution d = masked_logits(logits.col(j), valid);
    lp += d.logprobs[selection[j]];
    if (grad) {
      up.col(j) = -coeff * d.probs;
      up(selection[j], j) += coeff;
    }
    valid[selection[j]] = false;
  }
  if (grad) policy.net().backward(params, cache, up, *grad);
  return lp;
}

double logprob(const PolicyNet& policy, const Vector& params, const Observation& obs,
               std::span<const int> selection, Vector* grad, double coeff) {
  return logprob_encoded(policy, params, policy.normalize(encode_observation(obs)), selection, grad, coeff);
}

Selection select_random(int num_devices, int m, Rng& rng) {
  require(m >= 1 && m <= num_devices, "select_random: m must be in [1, N]");
  std::vector<int> all(num_devices);
  std::iota(all.begin(), all.end(), 0);
  Selection out;
  out.reserve(m);
  std::sample(all.begin(), all.end(), std::back_inserter(out), m, rng);
  return out;
}

Vector equal_split_energies(std::span<const DeviceProfile> profiles, const ChannelState& channel,
                            const SystemConfig& sys, int m) {
  require(m >= 1, "equal_split_energies: m must be >= 1");
  require(channel.gains.size() == static_cast<Eigen::Index>(profiles.size()), "equal_split_energies: size mismatch");
  Vector e(profiles.size());
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    const auto s = min_device_energy(profiles[i], sys.bandwidth / m, channel.gains[i], sys);
    e[i] = s ? s->energy : std::numeric_limits<double>::infinity();
  }
  return e;
}

Selection select_epsilon_greedy(const Observation& obs, const Vector& known_costs, double eps, Rng& rng) {
  require(eps >= 0 && eps <= 1, "select_epsilon_greedy: eps must be in [0, 1]");
  const int n = obs.num_devices(), m = obs.select_count;
  require(known_costs.size() == n, "select_epsilon_greedy: cost size mismatch");
  require(m >= 1 && m <= n, "select_epsilon_greedy: m must be in [1, N]");
  std::vector<double> u(n);
  for (int i = 0; i < n; ++i) {
    u[i] = std::isfinite(known_costs[i])
               ? obs.stats.global_loss[i] * std::sqrt(obs.stats.data_size[i]) / (1.0 + known_costs[i])
               : 0.0;
  }
  std::vector<int> rank(n);
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(), [&](int a, int b) { return u[a] > u[b]; });

  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<bool> used(n, false);
  Selection out;
  std::size_t next = 0;
  for (int slot = 0; slot < m; ++slot) {
    int pick = -1;
    if (eps > 0 && coin(rng) < eps) {
      std::vector<int> free;
      for (int i = 0; i < n; ++i) {
        if (!used[i]) free.push_back(i);
      }
      pick = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
    } else {
      while (used[rank[next]]) ++next;
      pick = rank[next];
    }
    used[pick] = true;
    out.push_back(pick);
  }
  return out;
}

Selection parse_selection(const std::string& text, int m, int num_devices) {
  Selection out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find(',', pos);
    if (end == std::string::npos) end = text.size();
    std::string tok = text.substr(pos, end - pos);
    const auto b = tok.find_first_not_of(" \t\r\n");
    const auto e = tok.find_last_not_of(" \t\r\n");
    if (b == std::string::npos) throw BackendMalformed("backend: empty index in '" + text + "'");
    tok = tok.substr(b, e - b + 1);
    long v = 0;
    const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size()) {
      throw BackendMalformed("backend: not an integer: '" + tok + "'");
    }
    if (v < 0 || v >= num_devices) throw BackendOutOfRange("backend: device index " + tok + " out of range");
    out.push_back(static_cast<int>(v));
    pos = end + 1;
  }
  if (static_cast<int>(out.size()) != m) {
    throw BackendMalformed("backend: expected " + std::to_string(m) + " indices, got '" + text + "'");
  }
  std::vector<int> s = out;
  std::sort(s.begin(), s.end());
  if (std::adjacent_find(s.begin(), s.end()) != s.end()) {
    throw BackendMalformed("backend: repeated device in '" + text + "'");
  }
  return out;
}

ProcessBackend::ProcessBackend(std::vector<std::string> argv, std::chrono::milliseconds timeout)
    : timeout_(timeout) {
  require(!argv.empty(), "ProcessBackend: empty command");
  signal(SIGPIPE, SIG_IGN);
  int in[2], out[2];
  if (pipe(in) != 0 || pipe(out) != 0) throw BackendError("ProcessBackend: pipe failed");
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_adddup2(&fa, in[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&fa, out[1], STDOUT_FILENO);
  for (int fd : {in[0], in[1], out[0], out[1]}) posix_spawn_file_actions_addclose(&fa, fd);
  std::vector<char*> args;
  for (auto& a : argv) args.push_back(a.data());
  args.push_back(nullptr);
  const int rc = posix_spawnp(&pid_, args[0], &fa, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&fa);
  close(in[0]);
  close(out[1]);
  to_child_ = in[1];
  from_child_ = out[0];
  if (rc != 0) {
    close(to_child_);
    close(from_child_);
    throw BackendError("ProcessBackend: cannot start '" + argv[0] + "': " + std::strerror(rc));
  }
}

ProcessBackend::~ProcessBackend() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  if (pid_ > 0) {
    kill(pid_, SIGTERM);
    waitpid(pid_, nullptr, 0);
  }
}

std::string ProcessBackend::exchange(const std::string& line) {
  std::string msg = line + "\n";
  for (std::size_t off = 0; off < msg.size();) {
    const ssize_t w = write(to_child_, msg.data() + off, msg.size() - off);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw BackendError("backend: write failed: " + std::string(std::strerror(errno)));
    }
    off += static_cast<std::size_t>(w);
  }
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  for (;;) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string reply = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return reply;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw BackendTimeout("backend: no reply within timeout");
    pollfd p{from_child_, POLLIN, 0};
    const int r = poll(&p, 1, static_cast<int>(left.count()));
    if (r < 0 && errno == EINTR) continue;
    if (r == 0) throw BackendTimeout("backend: no reply within timeout");
    char chunk[4096];
    const ssize_t got = read(from_child_, chunk, sizeof chunk);
    if (got < 0 && errno == EINTR) continue;
    if (got <= 0) throw BackendError("backend: process closed its output");
    buffer_.append(chunk, static_cast<std::size_t>(got));
  }
}

Selection ProcessBackend::query(const std::string& prompt, int m, int num_devices) {
  for (int attempt = 0;; ++attempt) {
    const long id = next_id_++;
    const nlohmann::json req = {{"id", id}, {"prompt", prompt}, {"m", m}, {"N", num_devices}};
    const std::string reply = exchange(req.dump());
    try {
      const auto j = nlohmann::json::parse(reply, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("selection_text") ||
          !j["selection_text"].is_string() || !j.contains("id") || j["id"] != id) {
        throw BackendMalformed("backend: malformed reply '" + reply + "'");
      }
      return parse_selection(j["selection_text"].get<std::string>(), m, num_devices);
    } catch (const BackendMalformed&) {
      if (attempt >= 1) throw;
    }
  }
}

Selection query_backend(ProcessBackend& backend, const std::string& prompt, int m, int num_devices) {
  return backend.query(prompt, m, num_devices);
}

}  // namespace wfl
