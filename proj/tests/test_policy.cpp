// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0

#include "wfl/policy.hpp"

#include "test_support.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

using namespace wfl;
using doctest::Approx;

namespace {

Observation tiny_observation(int devices = 5, int m = 2, std::uint64_t seed = 3) {
  Environment env(testing::tiny_env(devices, m));
  return env.reset(seed);
}

double chi2_pvalue(const std::vector<double>& counts, double expected) {
  double stat = 0;
  for (double c : counts) stat += (c - expected) * (c - expected) / expected;
  boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

// Index of an unordered pair {a, b} of n devices.
int pair_index(int a, int b, int n) {
  if (a > b) std::swap(a, b);
  return a * n - a * (a + 1) / 2 + (b - a - 1);
}

}  // namespace

TEST_CASE("observation encoding") {
  const Observation obs = tiny_observation(5, 2);
  const Vector x = encode_observation(obs);
  CHECK(x.size() == 8 * 5 + 2);
  for (int i = 0; i < 5; ++i) {
    CHECK(x[8 * i] == obs.stats.global_loss[i]);
    CHECK(x[8 * i + 1] == Approx(std::log(obs.stats.data_size[i])));
    CHECK(x[8 * i + 2] == Approx(std::log(obs.sys.gains[i])));
    CHECK(x[8 * i + 7] == 0.0);
  }
  CHECK(x[40] == 0.0);
  CHECK(x[41] == 0.0);
  CHECK(x.allFinite());
}

TEST_CASE("masked softmax") {
  Vector raw(4);
  raw << 1.0, 2.0, 3.0, 1000.0;
  const MaskedDistribution d = masked_logits(raw, {true, false, true, false});
  CHECK(d.probs[1] == 0.0);
  CHECK(d.probs[3] == 0.0);
  CHECK(std::isinf(d.logprobs[3]));
  CHECK(d.probs.sum() == Approx(1.0).epsilon(1e-15));
  CHECK(d.probs[2] / d.probs[0] == Approx(std::exp(2.0)));
  CHECK_THROWS_AS(masked_logits(raw, {false, false, false, false}), InvalidArgument);
  const MaskedDistribution big = masked_logits(raw, {true, true, true, true});
  CHECK(big.probs[3] == Approx(1.0));
  CHECK(big.probs.allFinite());
}

TEST_CASE("uniform logits give 1/6 per unordered pair of four") {
  PolicyNet net(4, 2, {3});
  const Vector zero = Vector::Zero(net.net().num_params());
  Environment env(testing::tiny_env(4, 2));
  const Observation obs = env.reset(1);
  for (int a = 0; a < 4; ++a) {
    for (int b = a + 1; b < 4; ++b) {
      const std::vector<int> ab{a, b}, ba{b, a};
      const double p = std::exp(logprob(net, zero, obs, ab)) + std::exp(logprob(net, zero, obs, ba));
      CHECK(p == Approx(1.0 / 6.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("sequence probabilities sum to one") {
  PolicyNet net(5, 3, {6});
  Rng rng(4);
  const Vector params = net.init(rng) * 300.0;
  const Observation obs = tiny_observation(5, 3);
  double total = 0;
  for (int a = 0; a < 5; ++a)
    for (int b = 0; b < 5; ++b)
      for (int c = 0; c < 5; ++c) {
        if (a == b || b == c || a == c) continue;
        const std::vector<int> s{a, b, c};
        total += std::exp(logprob(net, params, obs, s));
      }
  CHECK(total == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sampled actions are valid and match their log-probability") {
  PolicyNet net(6, 3, {8});
  Rng rng(5);
  const Vector params = net.init(rng) * 50.0;
  Environment env(testing::tiny_env(6, 3));
  const Observation obs = env.reset(2);
  for (int k = 0; k < 50; ++k) {
    const SampledAction a = sample_action(net, params, obs, 3, rng);
    REQUIRE(a.selection.size() == 3);
    std::vector<int> s = a.selection;
    std::sort(s.begin(), s.end());
    CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
    CHECK(s.front() >= 0);
    CHECK(s.back() < 6);
    CHECK(a.logprob == Approx(logprob(net, params, obs, a.selection)).epsilon(1e-12));
  }
  const Selection g = greedy_action(net, params, obs, 3);
  CHECK(g.size() == 3);
  CHECK(g == greedy_action(net, params, obs, 3));
}

TEST_CASE("log-probability gradient matches finite differences") {
  PolicyNet net(5, 3, {7, 5});
  Rng rng(6);
  const Vector params = net.init(rng) * 20.0;
  const Observation obs = tiny_observation(5, 3);
  const std::vector<int> sel{4, 1, 2};
  Vector grad = Vector::Zero(params.size());
  logprob(net, params, obs, sel, &grad, 1.5);
  std::uniform_int_distribution<Eigen::Index> pick(0, params.size() - 1);
  for (int k = 0; k < 60; ++k) {
    const Eigen::Index i = pick(rng);
    Vector p = params, q = params;
    const double h = 1e-6;
    p[i] += h;
    q[i] -= h;
    const double fd = 1.5 * (logprob(net, p, obs, sel) - logprob(net, q, obs, sel)) / (2 * h);
    CHECK(grad[i] == Approx(fd).epsilon(1e-5).scale(1e-8));
  }
}

TEST_CASE("policy save and load") {
  PolicyNet net(5, 2, {4});
  Rng rng(7);
  const Vector params = net.init(rng);
  const Observation obs = tiny_observation();
  const std::vector<Vector> enc{encode_observation(obs), encode_observation(tiny_observation(5, 2, 9))};
  net.fit_normalizer(enc);
  const auto path = std::filesystem::temp_directory_path() / "wfl_policy_test.bin";
  net.save(path.string(), params, "feed");
  Vector back_params;
  std::string fp;
  const PolicyNet back = PolicyNet::load(path.string(), back_params, &fp);
  CHECK(fp == "feed");
  CHECK(back_params == params);
  CHECK(back.obs_norm.mean == net.obs_norm.mean);
  CHECK(back.obs_norm.scale == net.obs_norm.scale);
  const std::vector<int> sel{3, 0};
  CHECK(logprob(back, back_params, obs, sel) == logprob(net, params, obs, sel));
  std::filesystem::remove(path);
}

TEST_CASE("random selection is uniform over subsets") {
  Rng rng(11);
  const int n = 5, draws = 20000;
  std::vector<double> counts(10, 0.0);
  for (int k = 0; k < draws; ++k) {
    const Selection s = select_random(n, 2, rng);
    REQUIRE(s.size() == 2);
    CHECK(s[0] < s[1]);
    counts[pair_index(s[0], s[1], n)] += 1;
  }
  CHECK(chi2_pvalue(counts, draws / 10.0) > 1e-3);
}

TEST_CASE("epsilon greedy") {
  Observation obs = tiny_observation(5, 2);
  obs.stats.global_loss = Vector::Ones(5);
  obs.stats.data_size << 100, 400, 900, 1600, 2500;
  Vector costs = Vector::Zero(5);
  Rng rng(12);
  SUBCASE("eps = 0 picks the top utilities") {
    Selection s = select_epsilon_greedy(obs, costs, 0.0, rng);
    CHECK(s == Selection{4, 3});
    costs[4] = 99.0;  // utility 50 / 100
    s = select_epsilon_greedy(obs, costs, 0.0, rng);
    CHECK(s == Selection{3, 2});
    costs[3] = std::numeric_limits<double>::infinity();
    s = select_epsilon_greedy(obs, costs, 0.0, rng);
    CHECK(s == Selection{2, 1});
  }
  SUBCASE("eps = 1 is uniform") {
    const int draws = 20000;
    std::vector<double> counts(10, 0.0);
    for (int k = 0; k < draws; ++k) {
      const Selection s = select_epsilon_greedy(obs, costs, 1.0, rng);
      counts[pair_index(s[0], s[1], 5)] += 1;
    }
    CHECK(chi2_pvalue(counts, draws / 10.0) > 1e-3);
  }
  CHECK_THROWS_AS(select_epsilon_greedy(obs, costs, 1.5, rng), InvalidArgument);
}

TEST_CASE("equal split energies") {
  SystemConfig sys;
  sys.qos_time = 30.0;
  Rng rng(13);
  std::vector<DeviceProfile> profiles{testing::random_profile(rng), testing::random_profile(rng)};
  ChannelState ch{Vector::Constant(2, 5e-7)};
  const Vector e = equal_split_energies(profiles, ch, sys, 2);
  for (int i = 0; i < 2; ++i) {
    const auto s = min_device_energy(profiles[i], sys.bandwidth / 2, 5e-7, sys);
    REQUIRE(s);
    CHECK(e[i] == s->energy);
  }
  sys.qos_time = 1e-9;
  const Vector inf = equal_split_energies(profiles, ch, sys, 2);
  CHECK(std::isinf(inf[0]));
}

TEST_CASE("selection parsing") {
  CHECK(parse_selection("3,1,4", 3, 5) == Selection{3, 1, 4});
  CHECK(parse_selection(" 0 , 2\n", 2, 3) == Selection{0, 2});
  CHECK_THROWS_AS(parse_selection("3,1", 3, 5), BackendMalformed);
  CHECK_THROWS_AS(parse_selection("3,1,1", 3, 5), BackendMalformed);
  CHECK_THROWS_AS(parse_selection("3,x,1", 3, 5), BackendMalformed);
  CHECK_THROWS_AS(parse_selection("3,,1", 3, 5), BackendMalformed);
  CHECK_THROWS_AS(parse_selection("", 1, 5), BackendMalformed);
  CHECK_THROWS_AS(parse_selection("3,5,1", 3, 5), BackendOutOfRange);
  CHECK_THROWS_AS(parse_selection("-1,2", 2, 5), BackendOutOfRange);
  CHECK_THROWS_AS(parse_selection("1.5,2", 2, 5), BackendMalformed);
}

namespace {

// Reply modes: ok, once (garbage then ok), garbage, range, sleep.
const char* kFakeBackend = R"(import json, sys, time
mode = sys.argv[1]
n = 0
for line in sys.stdin:
    req = json.loads(line)
    n += 1
    if mode == "sleep":
        time.sleep(5)
    if mode == "garbage" or (mode == "once" and n == 1):
        print("not json", flush=True)
        continue
    text = "9,0" if mode == "range" else ",".join(str(i) for i in range(req["m"]))
    print(json.dumps({"id": req["id"], "selection_text": text}), flush=True)
)";

std::string fake_backend_path() {
  const auto path = std::filesystem::temp_directory_path() / "wfl_fake_backend.py";
  std::ofstream(path) << kFakeBackend;
  return path.string();
}

bool have_python() { return std::system("python3 -c pass >/dev/null 2>&1") == 0; }

}  // namespace

TEST_CASE("process backend") {
  if (!have_python()) {
    MESSAGE("python3 not available; skipping backend tests");
    return;
  }
  const std::string script = fake_backend_path();
  const std::string prompt = render_prompt(tiny_observation());
  using namespace std::chrono_literals;
  SUBCASE("well-formed replies") {
    ProcessBackend b({"python3", script, "ok"}, 5s);
    CHECK(b.query(prompt, 2, 5) == Selection{0, 1});
    CHECK(query_backend(b, prompt, 3, 5) == Selection{0, 1, 2});
  }
  SUBCASE("one malformed reply is retried") {
    ProcessBackend b({"python3", script, "once"}, 5s);
    CHECK(b.query(prompt, 2, 5) == Selection{0, 1});
  }
  SUBCASE("repeated malformed replies fail") {
    ProcessBackend b({"python3", script, "garbage"}, 5s);
    CHECK_THROWS_AS(b.query(prompt, 2, 5), BackendMalformed);
  }
  SUBCASE("out of range") {
    ProcessBackend b({"python3", script, "range"}, 5s);
    CHECK_THROWS_AS(b.query(prompt, 2, 5), BackendOutOfRange);
  }
  SUBCASE("timeout") {
    ProcessBackend b({"python3", script, "sleep"}, 300ms);
    CHECK_THROWS_AS(b.query(prompt, 2, 5), BackendTimeout);
  }
  SUBCASE("missing executable") {
    CHECK_THROWS_AS(ProcessBackend({"/nonexistent/wfl-backend"}, 1s), BackendError);
  }
}
