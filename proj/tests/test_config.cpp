// Copyright (c) 2026, wflsel contributors
// SPDX-License-Identifier: Apache-2.0

#include "wfl/config.hpp"
#include "wfl/experiment.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace wfl;
using doctest::Approx;

TEST_CASE("presets validate") {
  for (const auto& name : preset_names()) {
    const ExperimentConfig c = make_preset(name);
    CHECK_NOTHROW(c.validate());
    CHECK(c.preset == name);
  }
  CHECK_THROWS_AS(make_preset("nope"), InvalidArgument);
  const ExperimentConfig d = make_preset("paper-default");
  CHECK(d.fl.num_devices == 20);
  CHECK(d.sys.num_rounds == 100);
  CHECK(d.sys.qos_time == 15.0);
}

TEST_CASE("scenario-2 redraws device capabilities only") {
  const ExperimentConfig a = make_preset("desk-small"), b = make_preset("scenario-2");
  const auto pa = sample_profiles(a), pb = sample_profiles(b);
  REQUIRE(pa.size() == pb.size());
  int differ = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    differ += pa[i].f_max != pb[i].f_max;
    CHECK(pa[i].model_bits == pb[i].model_bits);
  }
  CHECK(differ == static_cast<int>(pa.size()));
  CHECK(a.data.seed == b.data.seed);
  CHECK(a.sys.qos_time == b.sys.qos_time);
}

TEST_CASE("config text round trip") {
  ExperimentConfig c = make_preset("desk-small");
  c.sys.qos_time = 1.2345678901234567;
  c.policy.hidden = {64, 32};
  c.policy.algorithm = Algorithm::Ppo;
  c.bandwidth_mode = BandwidthMode::Optimized;
  c.dp_epsilon = 3.0;
  c.seed = 42;
  c.output_dir = "somewhere";
  const ExperimentConfig back = parse_config(c.to_ini());
  CHECK(back.to_ini() == c.to_ini());
  CHECK(back.sys.qos_time == c.sys.qos_time);
  CHECK(back.policy.hidden == std::vector<int>{64, 32});
  CHECK(back.policy.algorithm == Algorithm::Ppo);
  CHECK(back.seed == 42);
  CHECK(back.output_dir == "somewhere");
}

TEST_CASE("config parsing") {
  SUBCASE("keys apply over the preset") {
    const ExperimentConfig c = parse_config("[run]\npreset = paper-default\n[fl]\nlocal_iters = 3\n");
    CHECK(c.fl.num_devices == 20);
    CHECK(c.fl.local_iters == 3);
    CHECK(c.sys.local_iters == 3);
  }
  SUBCASE("rejections") {
    CHECK_THROWS_AS(parse_config("[fl]\nnum_device = 3\n"), InvalidArgument);
    CHECK_THROWS_AS(parse_config("[nope]\nx = 1\n"), InvalidArgument);
    CHECK_THROWS_AS(parse_config("seed = 1\n"), InvalidArgument);
    CHECK_THROWS_AS(parse_config("[fl]\nnum_devices = three\n"), InvalidArgument);
    CHECK_THROWS_AS(parse_config("[fl]\nnum_devices = 3.5\n"), InvalidArgument);
    CHECK_THROWS_AS(parse_config("[env]\nreuse_partition = maybe\n"), InvalidArgument);
    CHECK_THROWS_AS(parse_config("[env]\nbandwidth_mode = wide\n"), InvalidArgument);
    CHECK_THROWS_AS(parse_config("[env]\nselect_count = 99\n"), InvalidArgument);
    CHECK_THROWS_AS(parse_config("[run]\npreset = nope\n"), InvalidArgument);
  }
}

TEST_CASE("fingerprint") {
  ExperimentConfig a = make_preset("desk-small");
  ExperimentConfig b = a;
  b.seed = 999;
  b.output_dir = "elsewhere";
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.fingerprint().size() == 16);
  b.sys.qos_time += 1e-9;
  CHECK(a.fingerprint() != b.fingerprint());
  CHECK(make_preset("scenario-2").fingerprint() != a.fingerprint());
}

TEST_CASE("environment config from an experiment") {
  ExperimentConfig c = make_preset("desk-small");
  EnvConfig env = make_env_config(c);
  CHECK(env.num_devices() == 8);
  CHECK(env.train->size() == 2000);
  CHECK(env.test->size() == 1000);
  CHECK_FALSE(env.dp);
  const double bits = env.profiles[0].model_bits;
  c.quant_bits = 8;
  env = make_env_config(c);
  CHECK(env.quant_bits == 8);
  CHECK(env.profiles[0].model_bits == Approx(bits * 8 / 32));
  c.quant_bits = 0;
  c.dp_epsilon = 2.0;
  env = make_env_config(c);
  REQUIRE(env.dp);
  CHECK(env.dp->epsilon == 2.0);
  CHECK(env.dp->rounds == c.sys.num_rounds);
}

TEST_CASE("t interval and paired test") {
  const std::vector<double> xs{1, 2, 3, 4, 5};
  const Interval ci = t_interval(xs);
  CHECK(ci.mean == 3.0);
  const double half = 2.7764451051977987 * std::sqrt(2.5 / 5);
  CHECK(ci.high == Approx(3.0 + half).epsilon(1e-10));
  CHECK(ci.low == Approx(3.0 - half).epsilon(1e-10));
  const std::vector<double> a{2, 4, 6}, b{1, 2, 3};
  // Differences 1, 2, 3: t = 2 sqrt(3) on 2 degrees of freedom.
  const double t = 2 * std::sqrt(3.0);
  CHECK(paired_t_pvalue_greater(a, b) == Approx(0.5 * (1 - t / std::sqrt(t * t + 2))).epsilon(1e-10));
  CHECK(paired_t_pvalue_greater(b, a) == Approx(1 - 0.5 * (1 - t / std::sqrt(t * t + 2))).epsilon(1e-10));
  const std::vector<double> c{2, 3, 4};
  CHECK(paired_t_pvalue_greater(c, b) == 0.0);
  CHECK_THROWS_AS(t_interval(std::vector<double>{1.0}), InvalidArgument);
}

TEST_CASE("parallel collection is independent of the job count") {
  ExperimentConfig c = make_preset("desk-small");
  c.sys.num_rounds = 3;
  Environment env(make_env_config(c));
  const auto behavior = random_behavior(8, 4);
  const auto one = collect_parallel(env, behavior, 5, 7, "fp", 1);
  const auto three = collect_parallel(env, behavior, 5, 7, "fp", 3);
  REQUIRE(one.size() == 5);
  for (int e = 0; e < 5; ++e) CHECK(trajectory_to_ndjson(one[e]) == trajectory_to_ndjson(three[e]));
  int calls = 0;
  CHECK_THROWS_AS(parallel_for(4, 2,
                               [&](int i) {
                                 ++calls;
                                 if (i == 1) throw InvalidArgument("boom");
                               }),
                  InvalidArgument);
}

TEST_CASE("evaluation files") {
  ExperimentConfig c = make_preset("desk-small");
  c.sys.num_rounds = 2;
  const EnvConfig env = make_env_config(c);
  const auto trials = evaluate_trials(env, greedy_behavior(env, 0.1), 3, 5, c.fingerprint());
  const auto dir = std::filesystem::temp_directory_path() / "wfl_eval_test";
  std::filesystem::create_directories(dir);
  write_evaluation_csv((dir / "e.csv").string(), trials, "greedy", c.fingerprint(), 5);
  write_series_csv((dir / "s.csv").string(), trials, "greedy", c.fingerprint(), 5);
  std::ifstream f(dir / "e.csv");
  std::vector<std::string> lines;
  for (std::string l; std::getline(f, l);) lines.push_back(l);
  REQUIRE(lines.size() == 2 + 6 + 3 + 3);
  CHECK(lines[0] == "# fingerprint=" + c.fingerprint() + " seed=5 policy=greedy");
  CHECK(lines[1] == "trial,round,accuracy,energy_J,time_s,reward");
  CHECK(lines[8].rfind("total,0,", 0) == 0);
  CHECK(lines[11].rfind("summary,mean,", 0) == 0);
  std::ifstream s(dir / "s.csv");
  std::vector<std::string> slines;
  for (std::string l; std::getline(s, l);) slines.push_back(l);
  CHECK(slines.size() == 4);
  CHECK(slines[1] == "round,accuracy,energy_J,reward,cumulative_reward");
  const auto scores = cwpems(trials);
  CHECK(scores.size() == 3);
  std::filesystem::remove_all(dir);
}
