// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "gpsd/cli.hpp"
#include "test_support.hpp"

namespace gpsd {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small enough that a full pretrain + train pipeline finishes in seconds.
constexpr const char* kSmallConfig = R"(# tiny pipeline
data.users = 200
data.items = 150
data.categories = 6
data.events = 20000
data.positive_rate = 0.3
data.days = 6
data.seed = 3
data.disc_rows = 6000
data.behavior_max_len = 10
data.pretrain_min_len = 5
data.pretrain_max_len = 10

model.code = L1H8A2
pretrain.negatives = 16
pretrain.max_steps = 6
pretrain.batch_size = 32
pretrain.warmup = 2
train.max_steps = 12
train.batch_size = 64
train.warmup = 2
train.eval_interval = 6
train.auc_window = 4
)";

fs::path write_small_config(const fs::path& dir) {
  std::ofstream(dir / "small.cfg") << kSmallConfig;
  return dir / "small.cfg";
}

TEST_CASE("config grammar") {
  auto c = ConfigFile::parse(
      "# leading comment\n"
      "\n"
      "  optim.weight_decay   =  0.05   # trailing\n"
      "train.strategy=ft-sf\n"
      "sweep.codes = L1H8A2, L2H16A2 ,\n");
  CHECK(c.real("optim.weight_decay") == 0.05);
  CHECK(c.str("train.strategy") == "ft-sf");
  CHECK(c.list("sweep.codes") == std::vector<std::string>{"L1H8A2", "L2H16A2"});
  CHECK(c.size("train.batch_size") == 512);
  CHECK(c.size("train.warmup") == 500);
  CHECK(c.size("pretrain.negatives") == 4096);

  CHECK_THROWS_WITH_AS(ConfigFile::parse("run.seed = 2\n\noptim.peak = 1\n", "exp.cfg"),
                       doctest::Contains("exp.cfg:3: unknown config key 'optim.peak'"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(ConfigFile::parse("run.seed 2\n", "a.cfg"), doctest::Contains("a.cfg:1"),
                       ConfigError);

  c.set_assignment("run.seed = 42");
  CHECK(c.u64("run.seed") == 42);
  CHECK_THROWS_AS(c.set_assignment("run.seed"), ConfigError);
  CHECK_THROWS_AS(c.set_assignment("nope=1"), ConfigError);
  c.set("run.seed", "-1");
  CHECK_THROWS_AS(c.u64("run.seed"), ConfigError);
  c.set("optim.eps", "1e-8x");
  CHECK_THROWS_AS(c.real("optim.eps"), ConfigError);
  c.set("data.use_category", "maybe");
  CHECK_THROWS_AS(c.flag("data.use_category"), ConfigError);
}

TEST_CASE("echoed configs parse back to themselves") {
  ConfigFile defaults;
  CHECK(ConfigFile::parse(defaults.echo()).echo() == defaults.echo());
  auto c = ConfigFile::parse(kSmallConfig);
  c.set("run.dir", "/tmp/some where");
  const auto echoed = c.echo();
  CHECK(ConfigFile::parse(echoed).echo() == echoed);
  CHECK(echoed.find("run.dir = /tmp/some where\n") != std::string::npos);
  // Every key appears exactly once.
  std::istringstream in(echoed);
  std::string line;
  std::set<std::string> keys;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++lines;
    keys.insert(line.substr(0, line.find(" = ")));
  }
  CHECK(keys.size() == lines);
  CHECK(keys.count("optim.weight_decay") == 1);
}

TEST_CASE("exit codes and one-line errors") {
  auto r = run({});
  CHECK(r.code == 2);
  CHECK(r.err.starts_with("error: "));
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"train", "--no-such-flag"}).code == 2);
  CHECK(run({"fit"}).code == 2);
  CHECK(run({"--help"}).code == 0);

  r = run({"train", "--config", "/nonexistent/gpsd.cfg"});
  CHECK(r.code == 1);
  CHECK(r.err.find("cannot open config") != std::string::npos);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);

  r = run({"pretrain", "--set", "pretrain.bogus=1"});
  CHECK(r.code == 1);
  CHECK(r.err.find("unknown config key 'pretrain.bogus'") != std::string::npos);

  r = run({"inspect-ckpt", "/nonexistent/x.ckpt"});
  CHECK(r.code == 1);
}

TEST_CASE("strategy and checkpoint conflicts are rejected before any work") {
  const auto dir = testing::scratch_dir("cli_conflict");
  const auto cfg = write_small_config(dir);
  auto r = run({"train", "--config", cfg.string(), "--strategy", "nt", "--from-ckpt",
                (dir / "x.ckpt").string(), "--out", (dir / "run").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("NT accepts no checkpoint") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "run"));

  r = run({"train", "--config", cfg.string(), "--strategy", "st-sf", "--out",
           (dir / "run").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("requires --from-ckpt") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "run"));

  r = run({"train", "--config", cfg.string(), "--strategy", "ft", "--from-ckpt",
           (dir / "missing.ckpt").string(), "--out", (dir / "run").string()});
  CHECK(r.code == 1);
  CHECK_FALSE(fs::exists(dir / "run"));

  r = run({"train", "--config", cfg.string(), "--strategy", "sideways"});
  CHECK(r.code == 1);
}

TEST_CASE("fit reproduces the published asymptote") {
  const auto dir = testing::scratch_dir("cli_fit");
  {
    std::ofstream csv(dir / "table.csv");
    csv << "dense_params,auc,loss\n";
    const double n[] = {13e3, 53e3, 213e3, 850e3, 3.4e6, 27e6, 92e6, 327e6};
    const double a[] = {.6306, .6488, .6691, .6809, .6892, .6954, .7004, .7018};
    const double l[] = {.3922, .3882, .3830, .3796, .3771, .3751, .3735, .3732};
    // Written out of order; the reader sorts by N.
    for (int i = 7; i >= 0; --i) csv << n[i] << ',' << a[i] << ',' << l[i] << '\n';
  }
  auto asymptote = [](const std::string& text) {
    const auto at = text.find("asymptote ");
    REQUIRE(at != std::string::npos);
    return std::strtod(text.c_str() + at + 10, nullptr);
  };
  auto r = run({"fit", "--csv", (dir / "table.csv").string(), "--column", "auc"});
  REQUIRE(r.code == 0);
  CHECK(std::abs(asymptote(r.out) - 0.7097) <= 0.01);
  CHECK(r.out.find("saturating-up") != std::string::npos);

  r = run({"fit", "--csv", (dir / "table.csv").string(), "--column", "loss", "--out",
           (dir / "fit").string()});
  REQUIRE(r.code == 0);
  CHECK(std::abs(asymptote(r.out) - 0.3695) <= 0.005);
  CHECK(r.out.find("saturating-down") != std::string::npos);
  CHECK(slurp(dir / "fit" / "fit.txt") == r.out);

  CHECK(run({"fit", "--csv", (dir / "table.csv").string(), "--column", "ndcg"}).code == 1);
  CHECK(run({"fit", "--csv", (dir / "table.csv").string(), "--direction", "left"}).code == 1);
}

TEST_CASE("pipeline runs, replays bitwise and leaves its inputs alone") {
  const auto dir = testing::scratch_dir("cli_pipeline");
  const auto cfg = write_small_config(dir);
  const auto cfg_bytes = slurp(cfg);

  auto r = run({"gen-data", "--config", cfg.string(), "--out", (dir / "data").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("rows 20000") != std::string::npos);
  const auto log = dir / "data" / "log.tsv";
  const auto log_bytes = slurp(log);

  r = run({"pretrain", "--config", cfg.string(), "--set", "data.log=" + log.string(), "--out",
           (dir / "pre").string()});
  REQUIRE(r.code == 0);
  const auto ckpt = dir / "pre" / "pretrained.ckpt";
  REQUIRE(fs::exists(ckpt));
  CHECK(fs::exists(dir / "pre" / "metrics.csv"));
  CHECK(fs::exists(dir / "pre" / "result.txt"));
  const auto ckpt_bytes = slurp(ckpt);

  r = run({"train", "--config", cfg.string(), "--set", "data.log=" + log.string(), "--strategy",
           "st-sf", "--from-ckpt", ckpt.string(), "--out", (dir / "train").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("strategy st-sf\n") != std::string::npos);
  CHECK(r.out.find("steps 12") != std::string::npos);
  CHECK(slurp(dir / "train" / "result.txt") == r.out);

  // Replays from the echoed config alone.
  r = run({"train", "--config", (dir / "train" / "config.txt").string(), "--out",
           (dir / "replay").string()});
  REQUIRE(r.code == 0);
  const auto original = slurp(dir / "train" / "metrics.csv");
  CHECK(!original.empty());
  CHECK(slurp(dir / "replay" / "metrics.csv") == original);
  CHECK(slurp(dir / "replay" / "model.ckpt") == slurp(dir / "train" / "model.ckpt"));

  r = run({"pretrain", "--config", (dir / "pre" / "config.txt").string(), "--out",
           (dir / "pre_replay").string()});
  REQUIRE(r.code == 0);
  CHECK(slurp(dir / "pre_replay" / "metrics.csv") == slurp(dir / "pre" / "metrics.csv"));
  CHECK(slurp(dir / "pre_replay" / "pretrained.ckpt") == ckpt_bytes);

  // A run directory may not overwrite the config it was given.
  r = run({"train", "--config", (dir / "train" / "config.txt").string(), "--out",
           (dir / "train").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("choose another --out") != std::string::npos);

  r = run({"eval", "--config", cfg.string(), "--set", "data.log=" + log.string(), "--ckpt",
           (dir / "train" / "model.ckpt").string(), "--set", "eval.split=valid", "--out",
           (dir / "eval").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.starts_with("split valid\n"));

  r = run({"inspect-ckpt", ckpt.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("code L1H8A2") != std::string::npos);
  CHECK(r.out.find("emb.item sparse f32") != std::string::npos);

  CHECK(slurp(cfg) == cfg_bytes);
  CHECK(slurp(log) == log_bytes);
  CHECK(slurp(ckpt) == ckpt_bytes);
}

TEST_CASE("sweep writes one scaling row per code and seed") {
  const auto dir = testing::scratch_dir("cli_sweep");
  const auto cfg = write_small_config(dir);
  auto r = run({"sweep", "--config", cfg.string(), "--set", "sweep.codes=L1H8A2,L1H16A2,L2H16A2,L2H32A4",
                "--set", "sweep.seeds=1", "--out", (dir / "sweep").string()});
  REQUIRE(r.code == 0);
  std::vector<ScalingPoint> points = read_scaling_csv(dir / "sweep" / "scaling.csv");
  CHECK(points.size() == 4);
  const auto fit = slurp(dir / "sweep" / "fit.txt");
  CHECK(fit.find("auc (saturating-up)") != std::string::npos);
  CHECK(fit.find("loss (saturating-down)") != std::string::npos);
}

}  // namespace
}  // namespace gpsd
