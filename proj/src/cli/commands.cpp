// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "gpsd/analysis.hpp"
#include "gpsd/cli.hpp"
#include "gpsd/kernels.hpp"

namespace gpsd {

namespace fs = std::filesystem;

SyntheticConfig synthetic_config(const ConfigFile& c) {
  SyntheticConfig s;
  s.users = c.size("data.users");
  s.items = c.size("data.items");
  s.categories = c.size("data.categories");
  s.latent_dim = c.size("data.latent_dim");
  s.zipf = c.real("data.zipf");
  s.events = c.size("data.events");
  s.positive_rate = c.real("data.positive_rate");
  s.signal = c.real("data.signal");
  s.days = c.real("data.days");
  s.seed = c.u64("data.seed");
  return s;
}

SequenceOptions pretrain_sequence_options(const ConfigFile& c) {
  SequenceOptions o;
  o.min_len = c.size("data.pretrain_min_len");
  o.max_len = c.size("data.pretrain_max_len");
  o.drop_last_click = parse_example_mode(c.str("data.example_mode")) == ExampleMode::kTaobao;
  return o;
}

ExampleOptions example_options(const ConfigFile& c) {
  ExampleOptions o;
  o.min_len = c.size("data.behavior_min_len");
  o.max_len = c.size("data.behavior_max_len");
  o.mode = parse_example_mode(c.str("data.example_mode"));
  o.seed = c.u64("data.seed");
  o.last_rows = c.size("data.disc_rows");
  return o;
}

ModelConfig model_config(const ConfigFile& c, const InteractionLog& log, bool pretraining) {
  std::vector<FieldVocab> fields{{std::string(kItemField), log.item_vocab}};
  if (c.flag("data.use_category")) fields.push_back({"category", log.category_vocab});
  std::string code = c.str("model.code");
  if (pretraining && !c.str("pretrain.code").empty()) code = c.str("pretrain.code");
  auto m = ModelConfig::from_code(code, fields);
  m.direction = parse_direction(c.str(pretraining ? "pretrain.direction" : "model.direction"));
  m.ffn_dim = c.size("model.ffn_dim");
  m.max_seq_len = std::max(c.size("data.pretrain_max_len"), c.size("data.behavior_max_len"));
  m.validate();
  return m;
}

namespace {

TrainOptions stage_options(const ConfigFile& c, const std::string& stage) {
  TrainOptions o;
  o.batch_size = c.size(stage + ".batch_size");
  o.epochs = c.size(stage + ".epochs");
  o.max_steps = c.size(stage + ".max_steps");
  o.peak_lr = c.real(stage + ".peak_lr");
  o.warmup = c.size(stage + ".warmup");
  o.eval_interval = c.size(stage + ".eval_interval");
  o.lr_floor = c.real("optim.lr_floor");
  o.clip_norm = c.real("optim.clip_norm");
  o.adamw.beta1 = c.real("optim.beta1");
  o.adamw.beta2 = c.real("optim.beta2");
  o.adamw.eps = c.real("optim.eps");
  o.adamw.weight_decay = c.real("optim.weight_decay");
  o.seed = c.u64("run.seed");
  return o;
}

}  // namespace

PretrainOptions pretrain_options(const ConfigFile& c) {
  PretrainOptions o;
  o.train = stage_options(c, "pretrain");
  o.objective = parse_pretrain_objective(c.str("pretrain.objective"));
  o.negatives.count = c.size("pretrain.negatives");
  o.negatives.shared = c.flag("pretrain.shared_negatives");
  o.mask_rate = c.real("pretrain.mask_rate");
  o.side_features = c.flag("pretrain.side_features");
  return o;
}

TrainOptions train_options(const ConfigFile& c) {
  auto o = stage_options(c, "train");
  o.train_auc_window = c.size("train.auc_window");
  return o;
}

SweepOptions sweep_options(const ConfigFile& c, const InteractionLog& log) {
  SweepOptions o;
  const auto codes = c.list("sweep.codes");
  const auto pcodes = c.list("sweep.pretrain_codes");
  const auto lrs = c.list("sweep.peak_lrs");
  if (!pcodes.empty() && pcodes.size() != codes.size()) {
    throw ConfigError("sweep.pretrain_codes must list one code per sweep code");
  }
  if (!lrs.empty() && lrs.size() != codes.size()) {
    throw ConfigError("sweep.peak_lrs must list one rate per sweep code");
  }
  for (std::size_t i = 0; i < codes.size(); ++i) {
    SweepEntry e;
    e.code = codes[i];
    parse_model_code(e.code);
    if (!pcodes.empty()) e.pretrain_code = pcodes[i];
    if (!lrs.empty()) e.peak_lr = std::stod(lrs[i]);
    o.entries.push_back(e);
  }
  o.base = model_config(c, log, false);
  o.pretrain_direction = parse_direction(c.str("pretrain.direction"));
  o.pretrain = pretrain_options(c);
  o.train = train_options(c);
  o.strategy = parse_strategy(c.str("train.strategy"));
  o.seeds.clear();
  for (const auto& s : c.list("sweep.seeds")) o.seeds.push_back(std::stoull(s));
  return o;
}

Dataset load_dataset(const ConfigFile& c) {
  Dataset d;
  const auto& path = c.str("data.log");
  d.log = path.empty() ? generate_synthetic(synthetic_config(c)) : read_log_tsv(path);
  auto examples = build_discriminative_examples(d.log, example_options(c));
  d.skipped = examples.skipped;
  const double window = c.real("data.eval_window_days") * 86400.0;
  d.split = temporal_split(std::move(examples.examples), static_cast<std::int64_t>(window));
  auto seq_opts = pretrain_sequence_options(c);
  seq_opts.before = d.split.window_start;
  const double fraction = c.real("data.pretrain_valid_fraction");
  if (fraction < 0 || fraction >= 1) throw ConfigError("data.pretrain_valid_fraction must be in [0,1)");
  for (auto& s : build_pretrain_sequences(d.log, seq_opts)) {
    const bool valid = static_cast<double>(user_hash(s.user ^ 0x5bd1e995) % 10000) < fraction * 10000;
    (valid ? d.pretrain_valid : d.pretrain_train).push_back(std::move(s));
  }
  if (d.pretrain_train.empty()) throw ConfigError("no pretraining sequences (check lengths)");
  return d;
}

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "config file (key = value)");
  app->add_option("--set", c.sets, "override, key=value (repeatable)");
  app->add_option("--out", c.out, "run directory (run.dir)");
  app->add_option("--seed", c.seed, "run seed (run.seed)");
}

ConfigFile resolve(const Common& common) {
  auto cfg = common.config.empty() ? ConfigFile() : ConfigFile::load(common.config);
  for (const auto& s : common.sets) cfg.set_assignment(s);
  if (!common.out.empty()) cfg.set("run.dir", common.out);
  if (common.seed) cfg.set("run.seed", std::to_string(*common.seed));
  if (const auto threads = cfg.size("run.threads"); threads > 0) {
    kernels::set_threads(static_cast<int>(threads));
  }
  return cfg;
}

fs::path prepare_run_dir(const ConfigFile& cfg, const Common& common) {
  const fs::path dir = cfg.str("run.dir");
  if (dir.empty()) throw ConfigError("run.dir is empty");
  if (!common.config.empty()) {
    const auto cfg_path = fs::weakly_canonical(fs::absolute(common.config));
    if (fs::weakly_canonical(fs::absolute(dir / "config.txt")) == cfg_path) {
      throw ConfigError("run directory holds the input config; choose another --out");
    }
  }
  fs::create_directories(dir);
  std::ofstream(dir / "config.txt") << cfg.echo();
  return dir;
}

void write_result(const fs::path& dir, const std::string& text, std::ostream& out) {
  std::ofstream(dir / "result.txt") << text;
  out << text;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

int cmd_gen_data(const Common& common, std::ostream& out) {
  auto cfg = resolve(common);
  if (!cfg.str("data.log").empty()) throw ConfigError("gen-data generates data; unset data.log");
  const auto dir = prepare_run_dir(cfg, common);
  const auto log = generate_synthetic(synthetic_config(cfg));
  write_log_tsv(log, dir / "log.tsv");
  std::size_t pos = 0;
  for (const auto& r : log.rows) pos += static_cast<std::size_t>(r.label);
  std::ostringstream os;
  os << "rows " << log.rows.size() << "\nitem_vocab " << log.item_vocab << "\ncategory_vocab "
     << log.category_vocab << "\npositive_rate "
     << fmt(static_cast<double>(pos) / static_cast<double>(log.rows.size())) << "\nlog "
     << (dir / "log.tsv").string() << '\n';
  write_result(dir, os.str(), out);
  return 0;
}

int cmd_pretrain(const Common& common, std::ostream& out) {
  auto cfg = resolve(common);
  const auto opts = pretrain_options(cfg);
  const auto dir = prepare_run_dir(cfg, common);
  const auto data = load_dataset(cfg);
  Transformer<float> model(model_config(cfg, data.log, true), cfg.u64("run.seed"));
  MetricsWriter metrics(dir / "metrics.csv");
  const auto res = pretrain(model, data.pretrain_train, data.pretrain_valid, opts, &metrics);
  save_checkpoint(model, dir / "pretrained.ckpt");
  std::ostringstream os;
  os << "code " << model.config().code().str() << "\nsequences " << data.pretrain_train.size()
     << "\nsteps " << res.steps << "\nfinal_train_loss " << fmt(res.final_train_loss) << '\n';
  if (res.final_valid_loss) os << "final_valid_loss " << fmt(*res.final_valid_loss) << '\n';
  os << "checkpoint " << (dir / "pretrained.ckpt").string() << "\nseconds " << fmt(res.seconds)
     << '\n';
  write_result(dir, os.str(), out);
  return 0;
}

int cmd_train(const Common& common, std::ostream& out) {
  auto cfg = resolve(common);
  const auto strategy = parse_strategy(cfg.str("train.strategy"));
  const auto& ckpt_path = cfg.str("train.checkpoint");
  if (strategy == Strategy::kNT && !ckpt_path.empty()) {
    throw TransferError("NT accepts no checkpoint");
  }
  if (strategy != Strategy::kNT && ckpt_path.empty()) {
    throw TransferError("strategy " + std::string(strategy_name(strategy)) +
                        " requires --from-ckpt");
  }
  const auto opts = train_options(cfg);
  std::optional<Checkpoint> ckpt;
  if (!ckpt_path.empty()) ckpt = load_checkpoint(ckpt_path);
  const auto data = load_dataset(cfg);
  const auto mcfg = model_config(cfg, data.log, false);
  const bool lenient = cfg.flag("train.lenient_transfer");
  check_strategy(strategy, ckpt ? &*ckpt : nullptr, mcfg, lenient);

  const auto dir = prepare_run_dir(cfg, common);
  Transformer<float> model(mcfg, cfg.u64("run.seed") + 7919);
  auto report = apply_strategy(strategy, ckpt ? &*ckpt : nullptr, model, lenient);
  MetricsWriter metrics(dir / "metrics.csv");
  auto res = train_discriminative(model, data.split, opts, &metrics);
  save_checkpoint(model, dir / "model.ckpt");
  std::ostringstream os;
  os << "code " << mcfg.code().str() << "\nstrategy " << strategy_name(strategy)
     << "\ntrain_examples " << data.split.train.size() << "\nvalid_examples "
     << data.split.valid.size() << "\ntest_examples " << data.split.test.size() << "\nsteps "
     << res.steps << "\ntrain_auc " << fmt(res.train_auc) << "\nvalid_auc "
     << fmt(res.valid_auc) << "\nvalid_loss " << fmt(res.valid_loss) << "\ngap "
     << fmt(res.gap) << "\ntest_auc " << fmt(res.test_auc) << "\ntest_loss "
     << fmt(res.test_loss) << "\nseconds " << fmt(res.seconds) << '\n'
     << report.summary();
  write_result(dir, os.str(), out);
  return 0;
}

int cmd_eval(const Common& common, std::ostream& out) {
  auto cfg = resolve(common);
  const auto& path = cfg.str("eval.checkpoint");
  if (path.empty()) throw ConfigError("eval needs --ckpt (eval.checkpoint)");
  const auto split_name = cfg.str("eval.split");
  if (split_name != "train" && split_name != "valid" && split_name != "test") {
    throw ConfigError("eval.split must be train, valid or test");
  }
  const auto ckpt = load_checkpoint(path);
  const auto data = load_dataset(cfg);
  Transformer<float> model(ckpt.config, 0);
  for (auto& p : model.params().params()) load_parameter(ckpt.at(p.name), p);
  const auto dir = prepare_run_dir(cfg, common);
  const auto& split = split_name == "train"   ? data.split.train
                      : split_name == "valid" ? data.split.valid
                                              : data.split.test;
  const auto res = evaluate(model, split);
  std::ostringstream os;
  os << "split " << split_name << "\nexamples " << res.examples << "\nloss " << fmt(res.loss)
     << "\nauc " << fmt(res.auc) << '\n';
  write_result(dir, os.str(), out);
  return 0;
}

int cmd_sweep(const Common& common, std::ostream& out) {
  auto cfg = resolve(common);
  const auto dir = prepare_run_dir(cfg, common);
  const auto data = load_dataset(cfg);
  auto opts = sweep_options(cfg, data.log);
  opts.out_dir = dir;
  const auto res = scaling_sweep(opts, data.pretrain_train, data.pretrain_valid, data.split);
  write_scaling_csv(res.points, dir / "scaling.csv");
  std::ofstream fit(dir / "fit.txt");
  if (res.auc_fit) fit << format_fit("auc", *res.auc_fit) << '\n';
  if (res.loss_fit) fit << format_fit("loss", *res.loss_fit) << '\n';
  write_result(dir, sweep_summary(res), out);
  const bool all_ok = std::all_of(res.runs.begin(), res.runs.end(),
                                  [](const SweepRun& r) { return r.ok; });
  return all_ok ? 0 : 1;
}

int cmd_fit(const std::string& csv, const std::string& column, const std::string& x_column,
            const std::string& direction, const std::string& out_dir, std::ostream& out) {
  std::vector<double> x, y;
  read_csv_columns(csv, x_column, column, x, y);
  FitDirection dir;
  if (direction == "up") {
    dir = FitDirection::kSaturatingUp;
  } else if (direction == "down") {
    dir = FitDirection::kSaturatingDown;
  } else if (direction == "auto") {
    dir = column == "loss" ? FitDirection::kSaturatingDown : FitDirection::kSaturatingUp;
  } else {
    throw ConfigError("direction must be up, down or auto");
  }
  // Repeated x values (several seeds) are averaged.
  std::vector<double> ux, uy;
  for (std::size_t i = 0; i < x.size();) {
    std::size_t j = i;
    double s = 0;
    while (j < x.size() && x[j] == x[i]) s += y[j++];
    ux.push_back(x[i]);
    uy.push_back(s / static_cast<double>(j - i));
    i = j;
  }
  const auto fit = fit_power_law(ux, uy, dir);
  std::string text = format_fit(column, fit) + "\nasymptote " + fmt(fit.c) + "\n";
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream(fs::path(out_dir) / "fit.txt") << text;
  }
  out << text;
  return 0;
}

int cmd_inspect(const std::string& path, std::ostream& out) {
  const auto ckpt = load_checkpoint(path);
  out << "version " << kCheckpointVersion << "\ncode " << ckpt.config.code().str() << '\n';
  out << serialize_config(ckpt.config);
  out << "records " << ckpt.records.size() << "\nsparse_elements "
      << ckpt.element_count(Partition::kSparse) << "\ndense_elements "
      << ckpt.element_count(Partition::kDense) << '\n';
  for (const auto& r : ckpt.records) {
    const auto v = r.as_double();
    double mean = 0, sq = 0, lo = INFINITY, hi = -INFINITY;
    for (double x : v) {
      mean += x;
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    mean /= static_cast<double>(v.size());
    for (double x : v) sq += (x - mean) * (x - mean);
    std::string shape;
    for (std::size_t i = 0; i < r.dims.size(); ++i) shape += (i ? "x" : "") + std::to_string(r.dims[i]);
    out << r.name << ' ' << (r.partition == 0 ? "sparse" : "dense") << ' '
        << (r.dtype == DType::kF32 ? "f32" : "f64") << ' ' << shape << " mean " << fmt(mean)
        << " std " << fmt(std::sqrt(sq / static_cast<double>(v.size()))) << " min " << fmt(lo)
        << " max " << fmt(hi) << '\n';
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"GPSD: generative pretraining, sparse transfer and discriminative training"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic interaction log");
  add_common(gen, common);
  auto* pre = app.add_subcommand("pretrain", "generative or denoising pretraining");
  add_common(pre, common);
  auto* train = app.add_subcommand("train", "discriminative training under a transfer strategy");
  add_common(train, common);
  std::string strategy, from_ckpt;
  train->add_option("--strategy", strategy, "nt, ft, st, ft-sf, st-sf (train.strategy)");
  train->add_option("--from-ckpt", from_ckpt, "pretrained checkpoint (train.checkpoint)");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common(eval, common);
  std::string eval_ckpt;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint (eval.checkpoint)");
  auto* sweep = app.add_subcommand("sweep", "scaling sweep over model codes");
  add_common(sweep, common);
  auto* fit = app.add_subcommand("fit", "fit a saturating power law to CSV columns");
  std::string csv, column = "auc", x_column = "dense_params", direction = "auto", fit_out;
  fit->add_option("--csv", csv, "input CSV")->required();
  fit->add_option("--column", column, "y column");
  fit->add_option("--x", x_column, "x column");
  fit->add_option("--direction", direction, "up, down or auto");
  fit->add_option("--out", fit_out, "directory for fit.txt");
  auto* inspect = app.add_subcommand("inspect-ckpt", "print checkpoint header and tensor stats");
  std::string inspect_path;
  inspect->add_option("path", inspect_path, "checkpoint file")->required();

  std::vector<const char*> argv{"gpsd"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << '\n';
    return 2;
  }

  try {
    if (*gen) return cmd_gen_data(common, out);
    if (*pre) return cmd_pretrain(common, out);
    if (*train) {
      auto c = common;
      if (!strategy.empty()) c.sets.push_back("train.strategy=" + strategy);
      if (!from_ckpt.empty()) c.sets.push_back("train.checkpoint=" + from_ckpt);
      return cmd_train(c, out);
    }
    if (*eval) {
      auto c = common;
      if (!eval_ckpt.empty()) c.sets.push_back("eval.checkpoint=" + eval_ckpt);
      return cmd_eval(c, out);
    }
    if (*sweep) return cmd_sweep(common, out);
    if (*fit) return cmd_fit(csv, column, x_column, direction, fit_out, out);
    if (*inspect) return cmd_inspect(inspect_path, out);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << '\n';
    return 1;
  }
  return 1;
}

}  // namespace gpsd
