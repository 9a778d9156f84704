// Copyright 2026 The RLDX Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "rldx/cli/run_config.hpp"
#include "rldx/envs/episode.hpp"
#include "rldx/graphopt/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rldx;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI with `args`; stdout is captured, stderr discarded.
Run rldx(const std::string& args) {
  const std::string cmd = std::string(RLDX_CLI_PATH) + " " + args + " 2>/dev/null";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("rldx_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string p(const std::string& name) const { return (dir_ / name).string(); }

  std::string write_config(const std::string& name, const json& j) const {
    std::ofstream(p(name)) << j.dump();
    return p(name);
  }

  // Small settings so every command finishes in seconds.
  json small() const {
    return {{"train", {{"batch", 4}}},
            {"eval", {{"episodes", 3}}},
            {"rl",
             {{"n_rollouts", 2},
              {"critic_steps", 10},
              {"policy_steps", 3},
              {"chunk_critic_steps", 10},
              {"chunk_critic_batch", 4}}},
            {"graph", {{"repeats", 3}, {"warmup", 1}, {"trials", 1}}}};
  }

  fs::path dir_;
};

TEST_F(Cli, GenDataWritesManifest) {
  auto r = rldx("gen-data --env conveyor --episodes 100 --seed 7 --out " + p("d"));
  ASSERT_EQ(r.code, 0);
  auto m = envs::load_manifest(p("d"));
  EXPECT_EQ(m.episodes, 100u);
  EXPECT_EQ(m.seeds.front(), 7u);
  EXPECT_EQ(envs::load_dataset(p("d")).size(), 100u);
  EXPECT_EQ(json::parse(r.out).at("episodes"), 100);
}

TEST_F(Cli, UsageAndConfigErrorsExitTwo) {
  EXPECT_EQ(rldx("gen-data --env nosuch --episodes 2 --out " + p("x")).code, 2);
  EXPECT_EQ(rldx("").code, 2);
  EXPECT_EQ(rldx("frobnicate").code, 2);
  EXPECT_EQ(rldx("gen-data --env conveyor --bogus 1 --out " + p("x")).code, 2);
  EXPECT_EQ(rldx("gen-data --env conveyor --episodes -3 --out " + p("x")).code, 2);
  EXPECT_EQ(rldx("train --stage sideways --data " + p("x") + " --out " + p("c")).code, 2);
  EXPECT_EQ(rldx("gen-data --env conveyor --config " + p("missing.json") + " --out " + p("x")).code, 2);
  EXPECT_FALSE(fs::exists(p("x")));
  EXPECT_EQ(rldx("--help").code, 0);
}

TEST_F(Cli, ConfigIsValidatedBeforeSideEffects) {
  const auto unknown = write_config("u.json", {{"data", {{"episodes", 2}, {"colour", "red"}}}});
  EXPECT_EQ(rldx("gen-data --env shell --config " + unknown + " --out " + p("a")).code, 2);
  const auto typed = write_config("t.json", {{"data", {{"episodes", "many"}}}});
  EXPECT_EQ(rldx("gen-data --env shell --config " + typed + " --out " + p("b")).code, 2);
  const auto invalid = write_config("i.json", {{"train", {{"lr", -1.0}}}});
  EXPECT_EQ(rldx("gen-data --env shell --config " + invalid + " --out " + p("c")).code, 2);
  std::ofstream(p("broken.json")) << "{\"seed\": ";
  EXPECT_EQ(rldx("gen-data --env shell --config " + p("broken.json") + " --out " + p("d")).code, 2);
  for (const char* d : {"a", "b", "c", "d"}) EXPECT_FALSE(fs::exists(p(d))) << d;
}

TEST_F(Cli, FlagsOverrideConfigFile) {
  const auto cfg = write_config("c.json", {{"seed", 3}, {"data", {{"episodes", 4}}}});
  ASSERT_EQ(rldx("gen-data --env shell --config " + cfg + " --out " + p("a")).code, 0);
  auto a = envs::load_manifest(p("a"));
  EXPECT_EQ(a.episodes, 4u);
  EXPECT_EQ(a.seeds.front(), 3u);
  ASSERT_EQ(rldx("gen-data --env shell --config " + cfg + " --episodes 2 --seed 9 --out " + p("b")).code, 0);
  auto b = envs::load_manifest(p("b"));
  EXPECT_EQ(b.episodes, 2u);
  EXPECT_EQ(b.seeds.front(), 9u);
}

TEST_F(Cli, RunConfigRoundTripsThroughJson) {
  cli::RunConfig c;
  c.seed = 11;
  c.train.steps = 17;
  c.eval.advantage = 1;
  c.rl.bon_n = {1, 2};
  c.model.enc.stss_radius = 2;
  auto back = cli::run_config_from_json(cli::to_json(c));
  EXPECT_EQ(cli::to_json(back), cli::to_json(c));
  EXPECT_THROW(cli::run_config_from_json(json::array()), ConfigError);
  EXPECT_THROW(cli::run_config_from_json({{"model", {{"encoder", {{"depth", 3}}}}}}), ConfigError);
}

TEST_F(Cli, GenDataAndTrainAreByteReproducible) {
  for (const char* d : {"d1", "d2"}) {
    ASSERT_EQ(rldx(std::string("gen-data --env probe --episodes 3 --seed 5 --out ") + p(d)).code, 0);
  }
  for (const auto& f : envs::load_manifest(p("d1")).files) {
    EXPECT_EQ(slurp(dir_ / "d1" / f), slurp(dir_ / "d2" / f)) << f;
  }
  const auto cfg = write_config("c.json", small());
  for (const char* c : {"c1", "c2"}) {
    ASSERT_EQ(rldx("train --stage pretrain --steps 3 --config " + cfg + " --data " + p("d1") + " --out " + p(c)).code, 0);
  }
  EXPECT_EQ(slurp(dir_ / "c1" / "params.bin"), slurp(dir_ / "c2" / "params.bin"));
  EXPECT_EQ(slurp(dir_ / "c1" / "stats.json"), slurp(dir_ / "c2" / "stats.json"));
}

TEST_F(Cli, TrainStagesAndEvalMetrics) {
  const auto cfg = write_config("c.json", small());
  ASSERT_EQ(rldx("gen-data --env conveyor --episodes 3 --out " + p("dc")).code, 0);
  ASSERT_EQ(rldx("gen-data --env probe --episodes 3 --out " + p("dp")).code, 0);
  const std::string data = " --data " + p("dc") + " " + p("dp");
  ASSERT_EQ(rldx("train --stage pretrain --steps 2 --config " + cfg + data + " --out " + p("pre")).code, 0);
  EXPECT_EQ(rldx("train --stage midtrain --steps 2 --config " + cfg + data + " --out " + p("x")).code, 2);
  ASSERT_EQ(rldx("train --stage midtrain --steps 2 --config " + cfg + data + " --init " + p("pre") + " --out " +
                 p("mid") + " --log " + p("mid.jsonl"))
                .code,
            0);
  std::ifstream log(p("mid.jsonl"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    EXPECT_TRUE(json::parse(line).contains("loss"));
    ++lines;
  }
  EXPECT_EQ(lines, 2u);
  ASSERT_EQ(rldx("train --stage finetune --steps 2 --config " + cfg + " --data " + p("dp") + " --init " + p("mid") +
                 " --out " + p("ft"))
                .code,
            0);

  auto r = rldx("eval --ckpt " + p("ft") + " --env probe --config " + cfg + " --out " + p("m.json"));
  ASSERT_EQ(r.code, 0);
  for (const auto& j : {json::parse(r.out), json::parse(slurp(p("m.json")))}) {
    ASSERT_TRUE(j.at("success_rate").is_number());
    EXPECT_GE(j.at("success_rate").get<double>(), 0.0);
    EXPECT_LE(j.at("success_rate").get<double>(), 1.0);
    EXPECT_GT(j.at("mean_len").get<double>(), 0.0);
    EXPECT_EQ(j.at("n"), 3);
  }
  // Same config and seed: identical metrics.
  EXPECT_EQ(rldx("eval --ckpt " + p("ft") + " --env probe --config " + cfg).out, r.out);
  EXPECT_EQ(rldx("eval --ckpt " + p("ft") + " --env probe --exec-horizon 99").code, 2);
  EXPECT_EQ(rldx("eval --ckpt " + p("ft") + " --env probe --no-physics --no-memory --episodes 1").code, 0);
}

TEST_F(Cli, RuntimeFailuresExitOne) {
  EXPECT_EQ(rldx("eval --ckpt " + p("nowhere") + " --env conveyor").code, 1);
  ASSERT_EQ(rldx("gen-data --env conveyor --episodes 2 --out " + p("d")).code, 0);
  std::ofstream(dir_ / "d" / envs::episode_file_name(1), std::ios::trunc) << "garbage";
  EXPECT_EQ(rldx("train --stage pretrain --steps 1 --data " + p("d") + " --out " + p("c")).code, 1);
  EXPECT_FALSE(fs::exists(p("c")));
}

TEST_F(Cli, RecapAndBestOfN) {
  const auto cfg = write_config("c.json", small());
  ASSERT_EQ(rldx("gen-data --env conveyor --episodes 4 --dither 0.3 --out " + p("d")).code, 0);
  ASSERT_EQ(rldx("train --stage pretrain --steps 2 --config " + cfg + " --data " + p("d") + " --out " + p("bc")).code, 0);
  auto r = rldx("recap --ckpt " + p("bc") + " --env conveyor --data " + p("d") + " --config " + cfg +
                " --iterations 2 --out " + p("rc"));
  ASSERT_EQ(r.code, 0);
  auto m = json::parse(slurp(dir_ / "rc" / "metrics.json"));
  ASSERT_EQ(m.at("iterations").size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& it = m.at("iterations")[k];
    EXPECT_EQ(it.at("iteration"), k);
    EXPECT_TRUE(it.at("success_rate").is_number());
    EXPECT_TRUE(it.at("mean_len").is_number());
  }
  EXPECT_EQ(m.at("iterations")[2].at("dataset_episodes"), 8);
  EXPECT_TRUE(fs::exists(dir_ / "rc" / "iter_2" / "params.bin"));
  EXPECT_TRUE(fs::exists(dir_ / "rc" / "iter_1" / "labels.json"));

  auto b = rldx("bon-eval --ckpt " + p("bc") + " --env conveyor --data " + p("d") + " --config " + cfg +
                " --n 1,2,4 --out " + p("bon.json"));
  ASSERT_EQ(b.code, 0);
  auto bj = json::parse(slurp(p("bon.json")));
  ASSERT_EQ(bj.at("results").size(), 3u);
  EXPECT_EQ(bj.at("results")[2].at("N"), 4);
  EXPECT_EQ(bj.at("results")[0].at("n"), 3);
  EXPECT_EQ(rldx("bon-eval --ckpt " + p("bc") + " --env conveyor --data " + p("d") + " --n 0").code, 2);
}

TEST_F(Cli, GraphBenchReportsAllVariants) {
  auto j = small();
  j["model"] = {{"use_memory", true}};
  const auto cfg = write_config("c.json", j);
  auto r = rldx("graph-bench --config " + cfg + " --out " + p("g"));
  ASSERT_EQ(r.code, 0);
  auto rep = json::parse(r.out);
  const auto bytes = [&](const char* k) { return rep.at(k).at("bytes_total").get<double>(); };
  EXPECT_LT(bytes("fused"), bytes("folded"));
  EXPECT_LT(bytes("folded"), bytes("eager"));
  EXPECT_LT(rep.at("fused").at("launches").get<int>(), rep.at("eager").at("launches").get<int>());
  EXPECT_LE(rep.at("equivalence").at("fused_vs_eager").get<double>(), 1e-6);
  EXPECT_TRUE(rep.at("fused").contains("median_ms"));
  EXPECT_EQ(json::parse(slurp(dir_ / "g" / "report.json")), rep);
  auto fused = graphopt::load_graph(dir_ / "g" / "fused");
  std::size_t fused_nodes = 0;
  for (const auto& n : fused.nodes) fused_nodes += graphopt::fused_kinds().count(n.kind);
  EXPECT_GT(fused_nodes, 0u);
  EXPECT_EQ(rldx("graph-bench --physics").code, 2);  // default embodiment has no physics channel
}

TEST_F(Cli, GradCheck) {
  auto r = rldx("grad-check --stride 400 --out " + p("gc.json"));
  ASSERT_EQ(r.code, 0);
  auto j = json::parse(slurp(p("gc.json")));
  EXPECT_LE(j.at("max_rel_error").get<double>(), 1e-4);
  EXPECT_GT(j.at("coords_checked").get<int>(), 50);
  EXPECT_EQ(rldx("grad-check --eps 0").code, 2);
}

}  // namespace
