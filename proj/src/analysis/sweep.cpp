// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include "gpsd/sweep.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <sstream>

namespace gpsd {

namespace {

ModelConfig sized(const ModelConfig& base, std::string_view code, Direction direction) {
  ModelConfig c = base;
  const auto mc = parse_model_code(code);
  c.layers = mc.layers;
  c.hidden = mc.hidden;
  c.heads = mc.heads;
  c.ffn_dim = 0;
  c.head_hidden.clear();
  c.direction = direction;
  c.validate();
  return c;
}

}  // namespace

SweepResult scaling_sweep(const SweepOptions& o, std::span<const ItemSequence> pretrain_train,
                          std::span<const ItemSequence> pretrain_valid, const DataSplit& data) {
  if (o.entries.empty()) throw ConfigError("sweep needs at least one model code");
  if (o.seeds.empty()) throw ConfigError("sweep needs at least one seed");
  const bool needs_pretrain = traits(o.strategy).sparse_copied;
  SweepResult result;
  for (auto seed : o.seeds) {
    std::map<std::string, Checkpoint> pretrained;  // by pretraining code
    for (const auto& e : o.entries) {
      const auto t0 = std::chrono::steady_clock::now();
      SweepRun run;
      run.point.code = e.code;
      run.point.seed = seed;
      try {
        const auto disc_cfg = sized(o.base, e.code, o.base.direction);
        run.point.dense_params = count_dense_params(disc_cfg);
        const std::string pcode = e.pretrain_code.empty() ? e.code : e.pretrain_code;
        const Checkpoint* ckpt = nullptr;
        if (needs_pretrain) {
          auto it = pretrained.find(pcode);
          if (it == pretrained.end()) {
            Transformer<float> pmodel(sized(o.base, pcode, o.pretrain_direction), seed);
            auto popts = o.pretrain;
            popts.train.seed = seed;
            MetricsWriter writer;
            if (!o.out_dir.empty()) {
              writer = MetricsWriter(o.out_dir / ("pretrain_" + pcode + "_s" +
                                                  std::to_string(seed) + ".csv"));
            }
            pretrain(pmodel, pretrain_train, pretrain_valid, popts, &writer);
            it = pretrained.emplace(pcode, Checkpoint::from_model(pmodel)).first;
          }
          ckpt = &it->second;
        }
        Transformer<float> model(disc_cfg, seed + 7919);
        auto topts = o.train;
        topts.seed = seed;
        if (e.peak_lr > 0) topts.peak_lr = e.peak_lr;
        MetricsWriter writer;
        if (!o.out_dir.empty()) {
          writer = MetricsWriter(o.out_dir / ("train_" + e.code + "_s" + std::to_string(seed) +
                                              ".csv"));
        }
        auto res = train_discriminative(model, data, topts, o.strategy, ckpt, &writer);
        run.point.auc = res.valid_auc;
        run.point.loss = res.valid_loss;
        run.test_auc = res.test_auc;
        run.gap = res.gap;
        run.ok = true;
      } catch (const std::exception& ex) {
        run.error = ex.what();
      }
      run.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.runs.push_back(run);
    }
  }
  for (const auto& r : result.runs) {
    if (r.ok) result.points.push_back(r.point);
  }
  std::sort(result.points.begin(), result.points.end(),
            [](const ScalingPoint& a, const ScalingPoint& b) {
              return std::tie(a.dense_params, a.seed, a.code) <
                     std::tie(b.dense_params, b.seed, b.code);
            });
  fit_sweep(result);
  return result;
}

void fit_sweep(SweepResult& result) {
  std::map<std::size_t, std::pair<double, double>> sums;
  std::map<std::size_t, int> counts;
  for (const auto& p : result.points) {
    sums[p.dense_params].first += p.auc;
    sums[p.dense_params].second += p.loss;
    ++counts[p.dense_params];
  }
  result.auc_fit.reset();
  result.loss_fit.reset();
  if (sums.size() < 4) return;
  std::vector<double> n, a, l;
  for (const auto& [count, s] : sums) {
    n.push_back(static_cast<double>(count));
    a.push_back(s.first / counts[count]);
    l.push_back(s.second / counts[count]);
  }
  result.auc_fit = fit_power_law(n, a, FitDirection::kSaturatingUp);
  result.loss_fit = fit_power_law(n, l, FitDirection::kSaturatingDown);
}

std::string sweep_summary(const SweepResult& result) {
  std::ostringstream os;
  for (const auto& r : result.runs) {
    os << r.point.code << " seed " << r.point.seed << ": ";
    if (r.ok) {
      os << "dense " << r.point.dense_params << " valid_auc " << r.point.auc << " valid_loss "
         << r.point.loss << " test_auc " << r.test_auc << " gap " << r.gap;
    } else {
      os << "FAILED " << r.error;
    }
    os << " (" << r.seconds << " s)\n";
  }
  if (result.auc_fit) os << format_fit("auc", *result.auc_fit) << '\n';
  if (result.loss_fit) os << format_fit("loss", *result.loss_fit) << '\n';
  if (!result.auc_fit) os << "fit skipped: fewer than 4 distinct model sizes\n";
  return os.str();
}

}  // namespace gpsd
