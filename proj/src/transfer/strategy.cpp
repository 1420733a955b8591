// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

#include "gpsd/transfer.hpp"

namespace gpsd {

Strategy parse_strategy(std::string_view text) {
  std::string s;
  for (char ch : text) {
    if (ch == '&' || ch == '_') ch = '-';
    s += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  if (s == "nt") return Strategy::kNT;
  if (s == "ft") return Strategy::kFT;
  if (s == "st") return Strategy::kST;
  if (s == "ft-sf") return Strategy::kFTSF;
  if (s == "st-sf") return Strategy::kSTSF;
  throw ConfigError("unknown strategy '" + std::string(text) +
                    "' (expected nt, ft, st, ft-sf or st-sf)");
}

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kNT: return "nt";
    case Strategy::kFT: return "ft";
    case Strategy::kST: return "st";
    case Strategy::kFTSF: return "ft-sf";
    case Strategy::kSTSF: return "st-sf";
  }
  return "?";
}

StrategyTraits traits(Strategy s) {
  switch (s) {
    case Strategy::kNT: return {false, false, false};
    case Strategy::kFT: return {true, true, false};
    case Strategy::kST: return {true, false, false};
    case Strategy::kFTSF: return {true, true, true};
    case Strategy::kSTSF: return {true, false, true};
  }
  throw std::logic_error("unhandled strategy");
}

std::string TransferReport::summary() const {
  std::ostringstream os;
  auto list = [&](const char* label, const std::vector<std::string>& v) {
    os << label << ": ";
    if (v.empty()) os << "-";
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    os << '\n';
  };
  list("sparse transferred", transferred);
  list("unused checkpoint tables", missing_in_target);
  list("target tables not in checkpoint", missing_in_checkpoint);
  list("mismatched tables", mismatched);
  os << "dense tensors copied: " << dense_copied.size() << '\n';
  list("frozen", frozen);
  return os.str();
}

namespace {

std::string key_str(const SparseTableInfo& t) {
  return t.field + "[" + std::to_string(t.vocab) + "x" + std::to_string(t.dim) + "]";
}

// Matches tables by field; fills the report and throws on any strict-mode
// discrepancy or when nothing at all can be transferred.
std::vector<std::string> match_tables(const std::vector<SparseTableInfo>& source,
                                      const std::vector<SparseTableInfo>& target,
                                      bool lenient, TransferReport& report) {
  std::map<std::string, SparseTableInfo> src;
  for (const auto& t : source) src[t.field] = t;
  std::vector<std::string> ok;
  for (const auto& t : target) {
    auto it = src.find(t.field);
    if (it == src.end()) {
      report.missing_in_checkpoint.push_back(t.field);
    } else if (it->second.vocab != t.vocab || it->second.dim != t.dim) {
      report.mismatched.push_back(key_str(it->second) + " vs " + key_str(t));
    } else {
      ok.push_back(t.field);
    }
  }
  for (const auto& t : source) {
    if (std::none_of(target.begin(), target.end(),
                     [&](const SparseTableInfo& x) { return x.field == t.field; })) {
      report.missing_in_target.push_back(t.field);
    }
  }
  const bool exact = report.missing_in_checkpoint.empty() && report.missing_in_target.empty() &&
                     report.mismatched.empty();
  if ((!lenient && !exact) || ok.empty()) {
    std::ostringstream os;
    os << "sparse key mismatch:";
    for (const auto& m : report.mismatched) os << " " << m << ";";
    for (const auto& m : report.missing_in_checkpoint) os << " target field '" << m << "' absent from checkpoint;";
    for (const auto& m : report.missing_in_target) os << " checkpoint field '" << m << "' absent from target;";
    if (ok.empty() && exact) os << " no tables";
    throw TransferError(os.str());
  }
  return ok;
}

bool same_dense_layout(const ModelConfig& a, const ModelConfig& b) {
  return a.code() == b.code() && a.resolved_ffn_dim() == b.resolved_ffn_dim() &&
         a.resolved_head_hidden() == b.resolved_head_hidden() &&
         a.extra_features == b.extra_features && a.segments == b.segments;
}

}  // namespace

TransferReport cross_architecture_transfer(const Checkpoint& ckpt, SparseRegistry& target,
                                           const TransferOptions& options) {
  TransferReport report;
  const auto fields = match_tables(ckpt.sparse_tables(), target.sparse_tables(),
                                   options.lenient, report);
  for (const auto& f : fields) {
    target.load_sparse_table(f, ckpt.at("emb." + f).as_double());
    report.transferred.push_back(f);
    if (options.freeze) {
      target.freeze_sparse_table(f);
      report.frozen.push_back(f);
    }
  }
  return report;
}

void check_strategy(Strategy strategy, const Checkpoint* pretrained,
                    const ModelConfig& target, bool lenient) {
  const auto t = traits(strategy);
  if (!t.sparse_copied) {
    if (pretrained) throw TransferError("NT accepts no checkpoint");
    return;
  }
  if (!pretrained) {
    throw TransferError("strategy " + std::string(strategy_name(strategy)) +
                        " requires a pretrained checkpoint");
  }
  if (t.dense_copied) {
    if (pretrained->config.code() != target.code()) {
      throw TransferError("full transfer requires equal model codes (checkpoint " +
                          pretrained->config.code().str() + ", target " +
                          target.code().str() + ")");
    }
    if (!same_dense_layout(pretrained->config, target)) {
      throw TransferError("dense shape mismatch between checkpoint and target");
    }
  }
  std::vector<SparseTableInfo> wanted;
  for (const auto& f : target.fields) wanted.push_back({f.name, f.size, target.hidden});
  TransferReport scratch;
  match_tables(pretrained->sparse_tables(), wanted, lenient, scratch);
}

template <typename Real>
TransferReport apply_strategy(Strategy strategy, const Checkpoint* pretrained,
                              Transformer<Real>& target, bool lenient) {
  check_strategy(strategy, pretrained, target.config(), lenient);
  auto& store = target.params();
  store.clear_frozen();
  const auto t = traits(strategy);
  if (!t.sparse_copied) return {};

  TransferOptions opts;
  opts.lenient = lenient;
  opts.freeze = t.sparse_frozen;
  auto report = cross_architecture_transfer(*pretrained, target, opts);
  if (t.sparse_frozen) {
    report.frozen = store.frozen();
  }
  if (t.dense_copied) {
    for (auto& p : store.params()) {
      if (p.partition != Partition::kDense) continue;
      load_parameter(pretrained->at(p.name), p);
      report.dense_copied.push_back(p.name);
    }
  }
  return report;
}

template TransferReport apply_strategy(Strategy, const Checkpoint*, Transformer<float>&, bool);
template TransferReport apply_strategy(Strategy, const Checkpoint*, Transformer<double>&, bool);

}  // namespace gpsd
