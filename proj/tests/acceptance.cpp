// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion. Positional arguments
// select a subset of criteria (default: all).

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gpsd/analysis.hpp"
#include "gpsd/cli.hpp"
#include "gpsd/engine.hpp"
#include "gpsd/objectives.hpp"
#include "gpsd/optim.hpp"
#include "gpsd/sweep.hpp"
#include "gpsd/transfer.hpp"
#include "op_cases.hpp"
#include "test_support.hpp"

namespace gpsd {
namespace {

namespace fs = std::filesystem;
using testing::normals;
using testing::uniform_size;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

// Synthetic benchmark shared by the desk-scale criteria: 10^4 items,
// 5*10^4 discriminative rows, about 2*10^5 pretraining clicks.
constexpr const char* kBenchmark = R"(
data.users = 2000
data.items = 10000
data.categories = 50
data.latent_dim = 8
data.signal = 3
data.events = 1000000
data.positive_rate = 0.2
data.days = 150
data.disc_rows = 50000
data.behavior_min_len = 1
data.behavior_max_len = 20
data.pretrain_min_len = 5
data.pretrain_max_len = 20
data.eval_window_days = 2
model.code = L2H32A2
pretrain.negatives = 4096
pretrain.epochs = 10
pretrain.batch_size = 128
pretrain.warmup = 100
pretrain.peak_lr = 1e-3
train.epochs = 10
train.batch_size = 128
train.warmup = 100
)";

ConfigFile benchmark_config(std::uint64_t seed) {
  auto c = ConfigFile::parse(kBenchmark, "benchmark");
  c.set("data.seed", std::to_string(seed));
  c.set("run.seed", std::to_string(seed));
  return c;
}

// 1. Every differentiable op and the composed model against central
// differences in double precision.
Verdict gradient_correctness() {
  std::mt19937_64 rng(20260416);
  double worst = 0;
  std::size_t checks = 0;
  for (int round = 0; round < 10; ++round) {
    for (int kind = 0; kind < testing::kOpKinds; ++kind) {
      ParameterStore<double> store;
      auto c = testing::random_op_case(kind, rng, rng());
      testing::add_random_params(store, c.shapes, rng, c.stddev);
      worst = std::max(worst, testing::check_gradients(store, c.fn).max_error);
      ++checks;
    }
  }
  for (auto direction : {Direction::kCausal, Direction::kBidirectional}) {
    auto config = ModelConfig::from_code("L2H8A2", {{"item", 9}, {"category", 4}});
    config.direction = direction;
    config.max_seq_len = 6;
    config.ffn_dim = 8;
    config.head_hidden = {4};
    Transformer<double> model(config, 3);
    for (auto& p : model.params().params()) p.value = normals(p.size(), rng, 0.5);
    auto cand = testing::random_batch(config, {4, 2, 3}, rng, true);
    const std::vector<float> labels = {1, 0, 1};
    worst = std::max(worst, testing::check_gradients(model.params(), [&](Graph<double>& g, auto&) {
                              return discriminative_loss(model, g, cand, labels).loss;
                            }).max_error);
    auto seqs = testing::random_batch(config, {5, 3}, rng);
    auto negs = draw_negatives(model, seqs, NegativeConfig{4, true}, rng, true);
    if (direction == Direction::kCausal) {
      worst = std::max(worst, testing::check_gradients(model.params(), [&](Graph<double>& g, auto&) {
                                return generative_sequence_loss(model, g, seqs, negs, true).loss;
                              }).max_error);
    } else {
      auto mask = draw_mask(seqs, 0.5, rng);
      worst = std::max(worst, testing::check_gradients(model.params(), [&](Graph<double>& g, auto&) {
                                return denoising_loss(model, g, seqs, mask, negs, true).loss;
                              }).max_error);
    }
    checks += 2;
  }
  return {worst <= 1e-4, fmt("%zu checks, worst relative error %.3g (limit 1e-4)", checks, worst)};
}

// 2. Sampled softmax with every other item as a negative is the full softmax.
Verdict sampled_softmax_exactness() {
  std::mt19937_64 rng(2);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t v = uniform_size(rng, 2, 64), d = uniform_size(rng, 1, 8);
    const auto target = static_cast<std::int32_t>(uniform_size(rng, 0, v - 1));
    const auto h = normals(d, rng), table = normals(v * d, rng);
    // Full softmax by log-sum-exp over all rows.
    std::vector<double> logits(v);
    double top = -INFINITY;
    for (std::size_t j = 0; j < v; ++j) {
      logits[j] = 0;
      for (std::size_t k = 0; k < d; ++k) logits[j] += h[k] * table[j * d + k];
      top = std::max(top, logits[j]);
    }
    double z = 0;
    for (double l : logits) z += std::exp(l - top);
    const double full = top + std::log(z) - logits[static_cast<std::size_t>(target)];

    std::vector<std::int32_t> others;
    for (std::size_t j = 0; j < v; ++j) {
      if (static_cast<std::int32_t>(j) != target) others.push_back(static_cast<std::int32_t>(j));
    }
    Graph<double> g;
    SampledSoftmaxTargets spec{1, {target}, {others}};
    const double sampled =
        sampled_softmax_loss(g.constant({1, d}, h), g.constant({v, d}, table), spec).item();
    worst = std::max(worst, std::abs(sampled - full));
  }
  return {worst <= 1e-6, fmt("1000 cases, worst |sampled - full| %.3g (limit 1e-6)", worst)};
}

// 3. Sparse tensors stay bitwise equal to the checkpoint through training
// under both freezing strategies; the predicate table is exact.
Verdict freeze_contract() {
  SyntheticConfig sc;
  sc.users = 300;
  sc.items = 200;
  sc.events = 40000;
  sc.positive_rate = 0.3;
  sc.days = 6;
  sc.seed = 7;
  const auto log = generate_synthetic(sc);
  ExampleOptions eo;
  eo.min_len = 1;
  eo.max_len = 10;
  const auto split = temporal_split(build_discriminative_examples(log, eo).examples, 86400);
  auto config = ModelConfig::from_code("L2H16A2", {{"item", log.item_vocab}});
  config.max_seq_len = 10;

  Transformer<float> pre(config, 1);
  SequenceOptions so;
  so.min_len = 3;
  so.max_len = 10;
  so.before = split.window_start;
  PretrainOptions po;
  po.train.max_steps = 20;
  po.train.batch_size = 64;
  po.train.warmup = 2;
  po.negatives = {32, true};
  pretrain(pre, build_pretrain_sequences(log, so), {}, po);
  const auto ckpt = Checkpoint::from_model(pre);

  bool ok = true;
  std::string detail;
  for (auto s : {Strategy::kFTSF, Strategy::kSTSF}) {
    Transformer<float> model(config, 2);
    TrainOptions o;
    o.max_steps = 120;
    o.batch_size = 64;
    o.warmup = 10;
    o.peak_lr = 2e-3;
    auto r = train_discriminative(model, split, o, s, &ckpt);
    const auto after = Checkpoint::from_model(model);
    std::size_t sparse_equal = 0, sparse = 0, dense_changed = 0;
    for (const auto& rec : after.records) {
      const bool same = rec.payload == ckpt.at(rec.name).payload;
      if (rec.partition == 0) {
        ++sparse;
        sparse_equal += same ? 1 : 0;
      } else {
        dense_changed += same ? 0 : 1;
      }
    }
    ok = ok && r.steps >= 100 && sparse_equal == sparse && dense_changed >= 1;
    detail += fmt("%s: %zu steps, %zu/%zu sparse bitwise equal, %zu dense changed; ",
                  std::string(strategy_name(s)).c_str(), r.steps, sparse_equal, sparse,
                  dense_changed);
  }
  // (sparse copied, dense copied, sparse frozen)
  const std::tuple<Strategy, bool, bool, bool> table[] = {
      {Strategy::kNT, false, false, false},  {Strategy::kFT, true, true, false},
      {Strategy::kST, true, false, false},   {Strategy::kFTSF, true, true, true},
      {Strategy::kSTSF, true, false, true},
  };
  bool table_ok = true;
  for (const auto& [s, sc_, dc, sf] : table) {
    const auto t = traits(s);
    table_ok = table_ok && t.sparse_copied == sc_ && t.dense_copied == dc && t.sparse_frozen == sf;
  }
  detail += table_ok ? "predicate table exact" : "predicate table MISMATCH";
  return {ok && table_ok, detail};
}

// 4. Dense parameter counts against the published model scales.
Verdict parameter_counting() {
  const std::pair<const char*, double> scales[] = {
      {"L1H32A4", 13e3},   {"L4H32A4", 53e3},    {"L4H64A4", 213e3},      {"L4H128A4", 850e3},
      {"L4H256A4", 3.4e6}, {"L8H512A8", 27e6},   {"L12H768A12", 92e6}, {"L24H1024A16", 327e6},
  };
  bool ok = true;
  std::string detail;
  for (const auto& [code, published] : scales) {
    const auto n = static_cast<double>(
        count_dense_params(ModelConfig::from_code(code, {{std::string(kItemField), 100}})));
    const double rel = (n - published) / published;
    const bool in = std::abs(rel) <= 0.10;
    ok = ok && in;
    detail += fmt("%s %.0f (%+.1f%%%s) ", code, n, 100 * rel, in ? "" : " OUT");
  }
  return {ok, detail};
}

// 5. Power-law fits over the published scaling results.
Verdict power_law_reproduction() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> n = {13e3, 53e3, 213e3, 850e3, 3.4e6, 27e6, 92e6, 327e6};
  const std::vector<double> auc_y = {.6306, .6488, .6691, .6809, .6892, .6954, .7004, .7018};
  const std::vector<double> loss_y = {.3922, .3882, .3830, .3796, .3771, .3751, .3735, .3732};
  const auto a = fit_power_law(n, auc_y, FitDirection::kSaturatingUp);
  const auto l = fit_power_law(n, loss_y, FitDirection::kSaturatingDown);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = std::abs(a.c - 0.7097) <= 0.010 && std::abs(l.c - 0.3695) <= 0.005 && secs < 10;
  return {ok, fmt("AUC asymptote %.5f (target 0.7097 +- 0.010), loss asymptote %.5f "
                  "(target 0.3695 +- 0.005), %.3f s",
                  a.c, l.c, secs)};
}

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

// 6. Rank-sum AUC equals the pairwise statistic.
Verdict auc_equivalence() {
  std::mt19937_64 rng(6);
  std::size_t cases = 0, mismatches = 0;
  for (std::size_t n = 2; n <= 8; ++n) {
    for (std::uint32_t mask = 1; mask + 1 < (1u << n); ++mask) {
      std::vector<int> y(n);
      std::vector<double> s(n);
      for (std::size_t i = 0; i < n; ++i) {
        y[i] = (mask >> i) & 1;
        s[i] = static_cast<double>(uniform_size(rng, 0, 4));
      }
      mismatches += auc(s, y) == pairwise_auc(s, y) ? 0 : 1;
      ++cases;
    }
  }
  const std::size_t exhaustive = cases;
  for (int trial = 0; trial < 10000; ++trial) {
    const auto n = uniform_size(rng, 9, 200);
    std::vector<int> y(n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(uniform_size(rng, 0, 1));
      s[i] = trial % 2 ? normals(1, rng)[0] : static_cast<double>(uniform_size(rng, 0, 20));
    }
    y[0] = 1;
    y[1] = 0;
    // Both statistics are ratios of integers (in halves) over the pair
    // count; compare the exact numerators.
    double pos = 0;
    for (int v : y) pos += v;
    const double pairs = pos * (static_cast<double>(n) - pos);
    mismatches += std::round(auc(s, y) * pairs * 2) == std::round(pairwise_auc(s, y) * pairs * 2)
                      ? 0
                      : 1;
    ++cases;
  }
  return {mismatches == 0, fmt("%zu exhaustive + %zu random cases, %zu mismatches", exhaustive,
                               cases - exhaustive, mismatches)};
}

// 7. Sparse transfer with frozen embeddings against training from scratch.
Verdict gpsd_effect(const fs::path& out) {
  const auto t0 = std::chrono::steady_clock::now();
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto cfg = benchmark_config(seed);
    const auto data = load_dataset(cfg);
    Transformer<float> pre(model_config(cfg, data.log, true), seed);
    MetricsWriter pre_metrics(out / fmt("gpsd_pretrain_s%llu.csv", (unsigned long long)seed));
    pretrain(pre, data.pretrain_train, data.pretrain_valid, pretrain_options(cfg), &pre_metrics);
    const auto ckpt = Checkpoint::from_model(pre);

    const auto mcfg = model_config(cfg, data.log, false);
    const auto topts = train_options(cfg);
    Transformer<float> nt_model(mcfg, seed + 7919);
    MetricsWriter nt_metrics(out / fmt("gpsd_nt_s%llu.csv", (unsigned long long)seed));
    const auto nt = train_discriminative(nt_model, data.split, topts, Strategy::kNT, nullptr,
                                         &nt_metrics);
    Transformer<float> st_model(mcfg, seed + 7919);
    MetricsWriter st_metrics(out / fmt("gpsd_stsf_s%llu.csv", (unsigned long long)seed));
    const auto st = train_discriminative(st_model, data.split, topts, Strategy::kSTSF, &ckpt,
                                         &st_metrics);
    const bool win = st.valid_auc > nt.valid_auc && st.gap < nt.gap;
    wins += win ? 1 : 0;
    detail += fmt("seed %llu: ST&SF auc %.4f gap %.4f vs NT auc %.4f gap %.4f%s; ",
                  (unsigned long long)seed, st.valid_auc, st.gap, nt.valid_auc, nt.gap,
                  win ? "" : " (lost)");
  }
  const double mins =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60;
  detail += fmt("%d/3 seeds, %.1f min (budget 30)", wins, mins);
  return {wins >= 2 && mins <= 30, detail};
}

// 8. Validation AUC over a width/depth sweep under ST&SF.
Verdict scaling_monotonicity(const fs::path& out) {
  const auto t0 = std::chrono::steady_clock::now();
  auto cfg = benchmark_config(1);
  cfg.set("sweep.codes", "L1H8A2,L2H16A2,L2H32A4,L4H32A4");
  cfg.set("sweep.seeds", "1,2,3");
  cfg.set("train.strategy", "st-sf");
  const auto data = load_dataset(cfg);
  auto opts = sweep_options(cfg, data.log);
  opts.out_dir = out;
  const auto res = scaling_sweep(opts, data.pretrain_train, data.pretrain_valid, data.split);
  write_scaling_csv(res.points, out / "scaling.csv");

  int monotone = 0;
  std::string detail;
  for (auto seed : opts.seeds) {
    std::vector<ScalingPoint> pts;
    for (const auto& p : res.points) {
      if (p.seed == seed) pts.push_back(p);
    }
    bool ok = pts.size() == opts.entries.size();
    detail += fmt("seed %llu:", (unsigned long long)seed);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      detail += fmt(" %s %.4f", pts[i].code.c_str(), pts[i].auc);
      if (i > 0 && pts[i].auc < pts[i - 1].auc) ok = false;
    }
    detail += ok ? "; " : " (not monotone); ";
    monotone += ok ? 1 : 0;
  }
  const double mins =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60;
  detail += fmt("%d/3 seeds monotone, %.1f min", monotone, mins);
  return {monotone >= 2, detail};
}

// 9. Schedule landmarks.
Verdict schedule_exactness() {
  bool ok = true;
  double worst = 0;
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const auto warmup = uniform_size(rng, 1, 1000);
    // Even decay length so the cosine midpoint is an integer step.
    const auto total = warmup + 2 * uniform_size(rng, 1, 5000);
    const double peak = std::exp(normals(1, rng)[0]) * 1e-3;
    Schedule s(peak, warmup, total);
    const double errs[] = {std::abs(s.lr_at(warmup) - peak),
                           std::abs(s.lr_at(total) - 0.1 * peak),
                           std::abs(s.lr_at(warmup + (total - warmup) / 2) - 0.55 * peak)};
    for (double e : errs) {
      worst = std::max(worst, e);
      ok = ok && e <= 1e-12;
    }
  }
  return {ok, fmt("200 schedules, worst landmark error %.3g (limit 1e-12)", worst)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 10. Checkpoint stability, corruption rejection and run replay.
Verdict checkpoint_round_trip(const fs::path& out) {
  std::mt19937_64 rng(10);
  auto config = ModelConfig::from_code("L2H16A2", {{"item", 500}, {"category", 20}});
  Transformer<float> model(config, 4);
  for (auto& p : model.params().params()) {
    for (auto& x : p.value) x = static_cast<float>(normals(1, rng)[0]);
  }
  save_checkpoint(model, out / "a.ckpt");
  const auto loaded = load_checkpoint(out / "a.ckpt");
  save_checkpoint(loaded, out / "b.ckpt");
  Transformer<float> restored(loaded.config, 99);
  for (auto& p : restored.params().params()) load_parameter(loaded.at(p.name), p);
  bool values_equal = true;
  for (const auto& p : model.params().params()) {
    values_equal = values_equal && p.value == restored.params().at(p.name).value;
  }
  const auto bytes = slurp(out / "a.ckpt");
  const bool stable = bytes == slurp(out / "b.ckpt") && values_equal;

  std::size_t rejected = 0;
  const std::size_t flips = 200;
  for (std::size_t i = 0; i < flips; ++i) {
    auto corrupt = std::vector<std::uint8_t>(bytes.begin(), bytes.end());
    const auto at = uniform_size(rng, 0, corrupt.size() - 1);
    corrupt[at] ^= static_cast<std::uint8_t>(1u << uniform_size(rng, 0, 7));
    try {
      Checkpoint::decode(corrupt);
    } catch (const CheckpointError&) {
      ++rejected;
    }
  }
  bool truncated_rejected = false;
  try {
    auto cut = std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 9);
    Checkpoint::decode(cut);
  } catch (const CheckpointError&) {
    truncated_rejected = true;
  }

  // Replay: a small pretrain + train run, then the same runs from their
  // echoed configs.
  std::ofstream(out / "run.cfg") << R"(
data.users = 200
data.items = 150
data.events = 20000
data.positive_rate = 0.3
data.days = 6
data.seed = 3
data.disc_rows = 6000
data.behavior_max_len = 10
data.pretrain_min_len = 5
data.pretrain_max_len = 10
model.code = L1H16A2
pretrain.negatives = 16
pretrain.max_steps = 20
pretrain.batch_size = 32
pretrain.warmup = 2
train.max_steps = 40
train.batch_size = 64
train.warmup = 4
train.eval_interval = 10
)";
  std::ostringstream sink, err;
  const auto p = [&](const std::string& s) { return (out / s).string(); };
  int codes = 0;
  codes += run_cli({"pretrain", "--config", p("run.cfg"), "--out", p("pre")}, sink, err);
  codes += run_cli({"train", "--config", p("run.cfg"), "--strategy", "st-sf", "--from-ckpt",
                    p("pre/pretrained.ckpt"), "--out", p("train")},
                   sink, err);
  codes += run_cli({"pretrain", "--config", p("pre/config.txt"), "--out", p("pre2")}, sink, err);
  codes += run_cli({"train", "--config", p("train/config.txt"), "--out", p("train2")}, sink, err);
  const bool replay = codes == 0 && !slurp(out / "train/metrics.csv").empty() &&
                      slurp(out / "pre/metrics.csv") == slurp(out / "pre2/metrics.csv") &&
                      slurp(out / "train/metrics.csv") == slurp(out / "train2/metrics.csv");

  return {stable && rejected == flips && truncated_rejected && replay,
          fmt("save/load/save bitwise %s, %zu/%zu bit flips rejected, truncation %s, "
              "replayed metrics %s%s",
              stable ? "stable" : "UNSTABLE", rejected, flips,
              truncated_rejected ? "rejected" : "ACCEPTED", replay ? "identical" : "DIFFER",
              err.str().empty() ? "" : (" (" + err.str() + ")").c_str())};
}

}  // namespace
}  // namespace gpsd

int main(int argc, char** argv) {
  using namespace gpsd;
  CLI::App app{"GPSD acceptance criteria"};
  std::vector<int> only;
  std::string out_dir = (fs::temp_directory_path() / "gpsd_acceptance").string();
  app.add_option("criteria", only, "criterion numbers to run (default: all)");
  app.add_option("--out", out_dir, "scratch directory for benchmark outputs");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());

  const fs::path out = out_dir;
  fs::remove_all(out);
  fs::create_directories(out);

  struct Criterion {
    int id;
    const char* name;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", gradient_correctness},
      {2, "sampled-softmax exactness", sampled_softmax_exactness},
      {3, "freeze contract", freeze_contract},
      {4, "parameter counting", parameter_counting},
      {5, "power-law fit reproduction", power_law_reproduction},
      {6, "AUC oracle equivalence", auc_equivalence},
      {7, "desk-scale GPSD effect", [&] { return gpsd_effect(out); }},
      {8, "desk-scale scaling monotonicity",
       [&] {
         fs::create_directories(out / "sweep");
         return scaling_monotonicity(out / "sweep");
       }},
      {9, "schedule exactness", schedule_exactness},
      {10, "checkpoint round trip and replay",
       [&] {
         fs::create_directories(out / "ckpt");
         return checkpoint_round_trip(out / "ckpt");
       }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (v.pass ? "PASS" : "FAIL") << "  criterion " << c.id << " (" << c.name
              << "): " << v.detail << " [" << gpsd::fmt("%.1f", secs) << " s]" << std::endl;
    failed += v.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
