// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Config files and the `gpsd` command line.
//
// Config grammar: one `key = value` per line, `#` starts a comment, keys are
// dotted (`optim.weight_decay`). Every key has a default; unknown keys are
// errors. The fully resolved config is echoed to each run directory as
// config.txt and replays the run when passed back via --config.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gpsd/data.hpp"
#include "gpsd/engine.hpp"
#include "gpsd/sweep.hpp"
#include "gpsd/transfer.hpp"

namespace gpsd {

class ConfigFile {
 public:
  ConfigFile();  // all defaults

  static ConfigFile parse(std::string_view text, std::string_view origin = "<config>");
  static ConfigFile load(const std::filesystem::path& path);

  void set(std::string_view key, std::string_view value);
  // "key=value" as given to --set.
  void set_assignment(std::string_view assignment);
  bool has(std::string_view key) const;
  const std::string& get(std::string_view key) const;

  std::string str(std::string_view key) const { return get(key); }
  std::size_t size(std::string_view key) const;
  double real(std::string_view key) const;
  bool flag(std::string_view key) const;
  std::uint64_t u64(std::string_view key) const;
  std::vector<std::string> list(std::string_view key) const;

  // Resolved `key = value` lines in declaration order.
  std::string echo() const;

 private:
  std::vector<std::string> order_;
  std::map<std::string, std::string, std::less<>> values_;
};

// Typed views over a config.
SyntheticConfig synthetic_config(const ConfigFile& c);
SequenceOptions pretrain_sequence_options(const ConfigFile& c);
ExampleOptions example_options(const ConfigFile& c);
ModelConfig model_config(const ConfigFile& c, const InteractionLog& log, bool pretraining);
PretrainOptions pretrain_options(const ConfigFile& c);
TrainOptions train_options(const ConfigFile& c);
SweepOptions sweep_options(const ConfigFile& c, const InteractionLog& log);

// Data shared by every stage of one config: the log, the discriminative
// split and the pretraining sequences (restricted to clicks before the
// held-out window).
struct Dataset {
  InteractionLog log;
  DataSplit split;
  std::size_t skipped = 0;
  std::vector<ItemSequence> pretrain_train;
  std::vector<ItemSequence> pretrain_valid;
};

Dataset load_dataset(const ConfigFile& c);

// Entry point; returns the process exit code. Errors print one line to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gpsd
