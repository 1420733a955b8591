// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include "gpsd/engine.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "gpsd/analysis.hpp"

namespace gpsd {

namespace {

constexpr std::uint64_t kNegativeStream = 0x5851f42d4c957f2dULL;
constexpr std::uint64_t kValidStream = 0x14057b7ef767814fULL;

using Clock = std::chrono::steady_clock;

// Training allocates and frees the same large buffers every step; keep them
// in the heap instead of round-tripping through mmap.
void keep_heap_buffers() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::size_t total_steps(const TrainOptions& o, std::size_t per_epoch) {
  if (o.epochs < 1) throw ConfigError("epochs must be >= 1");
  const std::size_t full = o.epochs * per_epoch;
  return o.max_steps > 0 ? std::min(o.max_steps, full) : full;
}

// Aborts on a non-finite loss, or on a loss above 10x the first loss for
// 100 consecutive steps.
class DivergenceGuard {
 public:
  void observe(double loss, std::size_t step, double lr) {
    if (!std::isfinite(loss)) fail("non-finite loss", loss, step, lr);
    if (!initial_) initial_ = loss;
    if (loss > 10.0 * *initial_) {
      if (++streak_ >= 100) fail("loss above 10x its initial value for 100 steps", loss, step, lr);
    } else {
      streak_ = 0;
    }
  }

  [[noreturn]] void fail(const std::string& what, double loss, std::size_t step, double lr) const {
    std::ostringstream os;
    os << "training diverged at step " << step << ": " << what << " (loss " << loss
       << ", lr " << lr;
    if (initial_) os << ", initial loss " << *initial_;
    os << ")";
    throw DivergenceError(os.str());
  }

 private:
  std::optional<double> initial_;
  std::size_t streak_ = 0;
};

template <typename Real>
void validate_pretrain(const Transformer<Real>& model, const PretrainOptions& o) {
  const auto dir = model.config().direction;
  if (o.objective == PretrainObjective::kGenerative && dir != Direction::kCausal) {
    throw ConfigError("generative pretraining requires a causal model");
  }
  if (o.objective == PretrainObjective::kDenoising && dir != Direction::kBidirectional) {
    throw ConfigError("denoising pretraining requires a bidirectional model");
  }
}

template <typename Real>
Objective<Real> pretrain_objective(Transformer<Real>& model, Graph<Real>& g,
                                   const TokenBatch& batch, const PretrainOptions& o,
                                   std::mt19937_64& rng) {
  if (o.objective == PretrainObjective::kGenerative) {
    return generative_sequence_loss(model, g, batch, o.negatives, rng, o.side_features);
  }
  return denoising_loss(model, g, batch, o.mask_rate, o.negatives, rng, o.side_features);
}

template <typename Real>
double pretrain_valid_loss(Transformer<Real>& model, std::span<const ItemSequence> valid,
                           const PretrainOptions& o) {
  std::mt19937_64 rng(o.train.seed ^ kValidStream);
  Batcher batcher(valid.size(), o.train.eval_batch_size, 0, false);
  double sum = 0;
  std::size_t tokens = 0;
  for (const auto& idx : batcher.epoch(0)) {
    Graph<Real> g(false);
    auto batch = collate_sequences(valid, idx, model.config());
    auto obj = pretrain_objective(model, g, batch, o, rng);
    sum += obj.report.total * static_cast<double>(obj.report.tokens);
    tokens += obj.report.tokens;
  }
  return sum / static_cast<double>(tokens);
}

}  // namespace

std::size_t effective_warmup(std::size_t warmup, std::size_t total_steps) {
  if (total_steps < 2) throw ConfigError("training needs at least 2 steps");
  if (warmup > 0 && warmup < total_steps) return warmup;
  return std::max<std::size_t>(1, total_steps / 10);
}

PretrainObjective parse_pretrain_objective(std::string_view text) {
  if (text == "generative") return PretrainObjective::kGenerative;
  if (text == "denoising") return PretrainObjective::kDenoising;
  throw ConfigError("unknown pretraining objective '" + std::string(text) +
                    "' (expected generative or denoising)");
}

std::string_view pretrain_objective_name(PretrainObjective o) {
  return o == PretrainObjective::kGenerative ? "generative" : "denoising";
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path)
    : out_(std::make_unique<std::ofstream>(path, std::ios::trunc)) {
  if (!*out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
  *out_ << "step,split,loss,auc,gap,lr,epoch\n";
  out_->flush();
}

std::string MetricsWriter::format(const MetricsRow& r) {
  char buf[64];
  std::string s = std::to_string(r.step) + "," + r.split + ",";
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  s += num(r.loss) + ",";
  s += (r.auc ? num(*r.auc) : "") + ",";
  s += (r.gap ? num(*r.gap) : "") + ",";
  s += num(r.lr) + ",";
  s += num(r.epoch);
  return s;
}

void MetricsWriter::write(const MetricsRow& row) {
  if (!out_) return;
  *out_ << format(row) << '\n';
  out_->flush();
}

template <typename Real>
PretrainResult pretrain(Transformer<Real>& model, std::span<const ItemSequence> train,
                        std::span<const ItemSequence> valid, const PretrainOptions& o,
                        MetricsWriter* metrics) {
  validate_pretrain(model, o);
  keep_heap_buffers();
  const auto t0 = Clock::now();
  Batcher batcher(train.size(), o.train.batch_size, o.train.seed);
  const std::size_t per_epoch = batcher.batches_per_epoch();
  const std::size_t total = total_steps(o.train, per_epoch);
  Schedule schedule(o.train.peak_lr, effective_warmup(o.train.warmup, total), total,
                    o.train.lr_floor);
  AdamW<Real> opt(o.train.adamw);
  std::mt19937_64 rng(o.train.seed ^ kNegativeStream);
  DivergenceGuard guard;
  PretrainResult result;

  double window_sum = 0, epoch_sum = 0;
  std::size_t window_n = 0, epoch_n = 0, step = 0;
  auto emit = [&](double lr) {
    MetricsRow row;
    row.step = step;
    row.split = "train";
    row.loss = window_sum / static_cast<double>(window_n);
    row.lr = lr;
    row.epoch = static_cast<double>(step) / static_cast<double>(per_epoch);
    result.rows.push_back(row);
    if (metrics) metrics->write(row);
    window_sum = 0;
    window_n = 0;
    if (!valid.empty()) {
      row.split = "valid";
      row.loss = pretrain_valid_loss(model, valid, o);
      result.final_valid_loss = row.loss;
      result.rows.push_back(row);
      if (metrics) metrics->write(row);
    }
    if (o.train.on_eval) o.train.on_eval(step);
  };

  for (std::size_t epoch = 0; step < total; ++epoch) {
    epoch_sum = 0;
    epoch_n = 0;
    for (const auto& idx : batcher.epoch(epoch)) {
      if (step >= total) break;
      ++step;
      const double lr = schedule.lr_at(step);
      auto batch = collate_sequences(train, idx, model.config());
      model.params().zero_grad();
      double loss = 0;
      try {
        Graph<Real> g;
        auto obj = pretrain_objective(model, g, batch, o, rng);
        loss = obj.report.total;
        guard.observe(loss, step, lr);
        g.backward(obj.loss);
      } catch (const NumericError& e) {
        guard.fail(e.what(), NAN, step, lr);
      }
      try {
        clip_global_norm(model.params(), o.train.clip_norm);
      } catch (const NumericError& e) {
        guard.fail(e.what(), loss, step, lr);
      }
      opt.step(model.params(), lr);
      window_sum += loss;
      ++window_n;
      epoch_sum += loss;
      ++epoch_n;
      const bool epoch_end = step % per_epoch == 0 || step == total;
      const bool interval = o.train.eval_interval > 0 && step % o.train.eval_interval == 0;
      if (epoch_end || interval) emit(lr);
    }
  }
  result.steps = step;
  result.final_train_loss = epoch_sum / static_cast<double>(std::max<std::size_t>(1, epoch_n));
  result.seconds = seconds_since(t0);
  return result;
}

template <typename Real>
EvalResult evaluate(Transformer<Real>& model, std::span<const DiscriminativeExample> examples,
                    std::size_t batch_size) {
  if (examples.empty()) throw std::invalid_argument("empty evaluation split");
  EvalResult out;
  out.examples = examples.size();
  std::vector<float> labels;
  labels.reserve(examples.size());
  out.scores.reserve(examples.size());
  double loss_sum = 0;
  Batcher batcher(examples.size(), batch_size, 0, false);
  for (const auto& idx : batcher.epoch(0)) {
    Graph<Real> g(false);
    auto batch = collate_examples(examples, idx, model.config());
    auto res = discriminative_loss(model, g, batch.tokens, batch.labels);
    loss_sum += res.loss_sum;
    for (Real p : res.probs.value()) out.scores.push_back(static_cast<float>(p));
    labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
  }
  out.loss = loss_sum / static_cast<double>(examples.size());
  out.auc = auc(std::span<const float>(out.scores), std::span<const float>(labels));
  return out;
}

template <typename Real>
DiscriminativeResult train_discriminative(Transformer<Real>& model, const DataSplit& data,
                                          const TrainOptions& o, MetricsWriter* metrics) {
  if (data.valid.empty() || data.test.empty()) throw ConfigError("empty evaluation split");
  keep_heap_buffers();
  const auto t0 = Clock::now();
  Batcher batcher(data.train.size(), o.batch_size, o.seed);
  const std::size_t per_epoch = batcher.batches_per_epoch();
  const std::size_t total = total_steps(o, per_epoch);
  Schedule schedule(o.peak_lr, effective_warmup(o.warmup, total), total, o.lr_floor);
  AdamW<Real> opt(o.adamw);
  DivergenceGuard guard;
  DiscriminativeResult result;

  struct Window {
    std::vector<float> scores, labels;
    double loss_sum = 0;
  };
  std::deque<Window> window;
  std::size_t step = 0;

  auto emit = [&](double lr) {
    std::vector<float> scores, labels;
    double loss_sum = 0;
    for (const auto& w : window) {
      scores.insert(scores.end(), w.scores.begin(), w.scores.end());
      labels.insert(labels.end(), w.labels.begin(), w.labels.end());
      loss_sum += w.loss_sum;
    }
    MetricsRow train_row;
    train_row.step = step;
    train_row.split = "train";
    train_row.loss = loss_sum / static_cast<double>(scores.size());
    train_row.lr = lr;
    train_row.epoch = static_cast<double>(step) / static_cast<double>(per_epoch);
    try {
      train_row.auc = auc(std::span<const float>(scores), std::span<const float>(labels));
    } catch (const AucError&) {
    }
    const auto v = evaluate(model, data.valid, o.eval_batch_size);
    MetricsRow valid_row = train_row;
    valid_row.split = "valid";
    valid_row.loss = v.loss;
    valid_row.auc = v.auc;
    if (train_row.auc) {
      valid_row.gap = *train_row.auc - v.auc;
      result.train_auc = *train_row.auc;
      result.gap = *valid_row.gap;
    }
    result.valid_auc = v.auc;
    result.valid_loss = v.loss;
    for (const auto* row : {&train_row, &valid_row}) {
      result.rows.push_back(*row);
      if (metrics) metrics->write(*row);
    }    if (o.on_eval) o.on_eval(step);
  };

  double lr = 0;
  for (std::size_t epoch = 0; step < total; ++epoch) {
    for (const auto& idx : batcher.epoch(epoch)) {
      if (step >= total) break;
      ++step;
      lr = schedule.lr_at(step);
      auto batch = collate_examples(data.train, idx, model.config());
      model.params().zero_grad();
      Window w;
      try {
        Graph<Real> g;
        auto res = discriminative_loss(model, g, batch.tokens, batch.labels);
        const double loss = static_cast<double>(res.loss.item());
        guard.observe(loss, step, lr);
        g.backward(res.loss);
        for (Real p : res.probs.value()) w.scores.push_back(static_cast<float>(p));
        w.loss_sum = res.loss_sum;
      } catch (const NumericError& e) {
        guard.fail(e.what(), NAN, step, lr);
      }
      w.labels = batch.labels;
      try {
        clip_global_norm(model.params(), o.clip_norm);
      } catch (const NumericError& e) {
        guard.fail(e.what(), w.loss_sum, step, lr);
      }
      opt.step(model.params(), lr);
      window.push_back(std::move(w));
      while (window.size() > std::max<std::size_t>(1, o.train_auc_window)) window.pop_front();
      const bool epoch_end = step % per_epoch == 0 || step == total;
      const bool interval = o.eval_interval > 0 && step % o.eval_interval == 0;
      if (epoch_end || interval) emit(lr);
    }
  }
  result.steps = step;

  const auto t = evaluate(model, data.test, o.eval_batch_size);
  result.test_auc = t.auc;
  result.test_loss = t.loss;
  MetricsRow test_row;
  test_row.step = step;
  test_row.split = "test";
  test_row.loss = t.loss;
  test_row.auc = t.auc;
  test_row.lr = lr;
  test_row.epoch = static_cast<double>(step) / static_cast<double>(per_epoch);
  result.rows.push_back(test_row);
  if (metrics) metrics->write(test_row);
  result.seconds = seconds_since(t0);
  return result;
}

template <typename Real>
DiscriminativeResult train_discriminative(Transformer<Real>& model, const DataSplit& data,
                                          const TrainOptions& options, Strategy strategy,
                                          const Checkpoint* pretrained, MetricsWriter* metrics) {
  auto report = apply_strategy(strategy, pretrained, model);
  auto result = train_discriminative(model, data, options, metrics);
  result.transfer = std::move(report);
  return result;
}

#define GPSD_INSTANTIATE_ENGINE(Real)                                                     \
  template PretrainResult pretrain(Transformer<Real>&, std::span<const ItemSequence>,      \
                                   std::span<const ItemSequence>, const PretrainOptions&,  \
                                   MetricsWriter*);                                        \
  template EvalResult evaluate(Transformer<Real>&, std::span<const DiscriminativeExample>, \
                               std::size_t);                                               \
  template DiscriminativeResult train_discriminative(Transformer<Real>&, const DataSplit&, \
                                                     const TrainOptions&, MetricsWriter*); \
  template DiscriminativeResult train_discriminative(Transformer<Real>&, const DataSplit&, \
                                                     const TrainOptions&, Strategy,        \
                                                     const Checkpoint*, MetricsWriter*);

GPSD_INSTANTIATE_ENGINE(float)
GPSD_INSTANTIATE_ENGINE(double)

#undef GPSD_INSTANTIATE_ENGINE

}  // namespace gpsd
