// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include <charconv>
#include <fstream>
#include <sstream>

#include "gpsd/cli.hpp"

namespace gpsd {

namespace {

struct Default {
  const char* key;
  const char* value;
};

// Optimizer and batch defaults follow the public-dataset hyperparameters
// (batch 512, warmup 500, 10 epochs, 4096 negatives).
constexpr Default kDefaults[] = {
    {"run.dir", "runs/default"},
    {"run.seed", "1"},
    {"run.threads", "0"},

    {"data.log", ""},
    {"data.users", "2000"},
    {"data.items", "10000"},
    {"data.categories", "50"},
    {"data.latent_dim", "16"},
    {"data.zipf", "1.1"},
    {"data.events", "500000"},
    {"data.positive_rate", "0.1"},
    {"data.signal", "1.5"},
    {"data.days", "30"},
    {"data.seed", "1"},
    {"data.example_mode", "logged"},
    {"data.disc_rows", "50000"},
    {"data.behavior_min_len", "1"},
    {"data.behavior_max_len", "50"},
    {"data.pretrain_min_len", "10"},
    {"data.pretrain_max_len", "50"},
    {"data.eval_window_days", "1"},
    {"data.pretrain_valid_fraction", "0.05"},
    {"data.use_category", "false"},

    {"model.code", "L2H32A2"},
    {"model.direction", "causal"},
    {"model.ffn_dim", "0"},

    {"pretrain.code", ""},
    {"pretrain.direction", "causal"},
    {"pretrain.objective", "generative"},
    {"pretrain.negatives", "4096"},
    {"pretrain.shared_negatives", "true"},
    {"pretrain.mask_rate", "0.15"},
    {"pretrain.side_features", "false"},
    {"pretrain.epochs", "10"},
    {"pretrain.max_steps", "0"},
    {"pretrain.batch_size", "512"},
    {"pretrain.peak_lr", "5e-4"},
    {"pretrain.warmup", "500"},
    {"pretrain.eval_interval", "0"},

    {"train.strategy", "st-sf"},
    {"train.checkpoint", ""},
    {"train.lenient_transfer", "false"},
    {"train.epochs", "10"},
    {"train.max_steps", "0"},
    {"train.batch_size", "512"},
    {"train.peak_lr", "5e-4"},
    {"train.warmup", "500"},
    {"train.eval_interval", "0"},
    {"train.auc_window", "50"},

    {"eval.checkpoint", ""},
    {"eval.split", "test"},

    {"optim.beta1", "0.9"},
    {"optim.beta2", "0.98"},
    {"optim.eps", "1e-8"},
    {"optim.weight_decay", "0.1"},
    {"optim.clip_norm", "1.0"},
    {"optim.lr_floor", "0.1"},

    {"sweep.codes", "L1H8A2,L2H16A2,L2H32A4,L4H32A4"},
    {"sweep.pretrain_codes", ""},
    {"sweep.peak_lrs", ""},
    {"sweep.seeds", "1,2,3"},
};

std::string trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

ConfigFile::ConfigFile() {
  for (const auto& d : kDefaults) {
    order_.emplace_back(d.key);
    values_[d.key] = d.value;
  }
}

ConfigFile ConfigFile::parse(std::string_view text, std::string_view origin) {
  ConfigFile c;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    }
    try {
      c.set(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void ConfigFile::set(std::string_view key, std::string_view value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  it->second = std::string(value);
}

void ConfigFile::set_assignment(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

bool ConfigFile::has(std::string_view key) const { return values_.find(key) != values_.end(); }

const std::string& ConfigFile::get(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  return it->second;
}

std::size_t ConfigFile::size(std::string_view key) const { return u64(key); }

std::uint64_t ConfigFile::u64(std::string_view key) const {
  const auto& s = get(key);
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError("config key " + std::string(key) + " expects a non-negative integer, got '" +
                      s + "'");
  }
  return v;
}

double ConfigFile::real(std::string_view key) const {
  const auto& s = get(key);
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError("config key " + std::string(key) + " expects a number, got '" + s + "'");
  }
  return v;
}

bool ConfigFile::flag(std::string_view key) const {
  const auto& s = get(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config key " + std::string(key) + " expects true/false, got '" + s + "'");
}

std::vector<std::string> ConfigFile::list(std::string_view key) const {
  std::vector<std::string> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto t = trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

std::string ConfigFile::echo() const {
  std::string out;
  std::string section;
  for (const auto& k : order_) {
    const auto s = k.substr(0, k.find('.'));
    if (s != section) {
      if (!section.empty()) out += '\n';
      section = s;
    }
    out += k + " = " + values_.at(k) + '\n';
  }
  return out;
}

}  // namespace gpsd
