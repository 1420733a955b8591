// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <charconv>
#include <cmath>
#include <regex>

#include "gpsd/model.hpp"

namespace gpsd {

std::string_view direction_name(Direction d) {
  return d == Direction::kCausal ? "causal" : "bidirectional";
}

Direction parse_direction(std::string_view text) {
  if (text == "causal" || text == "uni" || text == "unidirectional") {
    return Direction::kCausal;
  }
  if (text == "bidirectional" || text == "bi") return Direction::kBidirectional;
  throw ConfigError("unknown directionality: " + std::string(text));
}

std::string ModelCode::str() const {
  return "L" + std::to_string(layers) + "H" + std::to_string(hidden) + "A" +
         std::to_string(heads);
}

ModelCode parse_model_code(std::string_view text) {
  static const std::regex kPattern(R"(L([0-9]+)H([0-9]+)A([0-9]+))");
  std::cmatch m;
  if (!std::regex_match(text.begin(), text.end(), m, kPattern)) {
    throw ConfigError("malformed model code: '" + std::string(text) + "'");
  }
  auto num = [&](int i) {
    std::size_t v = 0;
    const char* first = m[i].first;
    const char* last = m[i].second;
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc{} || v == 0) {
      throw ConfigError("malformed model code: '" + std::string(text) + "'");
    }
    return v;
  };
  ModelCode code{num(1), num(2), num(3)};
  if (code.hidden % code.heads != 0) {
    throw ConfigError("model code " + code.str() +
                      ": hidden width not divisible by heads");
  }
  return code;
}

std::size_t default_ffn_dim(std::size_t hidden) {
  const auto base = static_cast<std::size_t>(std::llround(8.0 * hidden / 3.0));
  return (base + 7) / 8 * 8;
}

ModelConfig ModelConfig::from_code(std::string_view code,
                                   std::vector<FieldVocab> fields) {
  const ModelCode c = parse_model_code(code);
  ModelConfig cfg;
  cfg.layers = c.layers;
  cfg.hidden = c.hidden;
  cfg.heads = c.heads;
  cfg.fields = std::move(fields);
  return cfg;
}

std::size_t ModelConfig::resolved_ffn_dim() const {
  return ffn_dim ? ffn_dim : default_ffn_dim(hidden);
}

std::vector<std::size_t> ModelConfig::resolved_head_hidden() const {
  if (!head_hidden.empty()) return head_hidden;
  return {hidden, std::max<std::size_t>(hidden / 2, 1)};
}

std::size_t ModelConfig::vocab(std::string_view field) const {
  for (const auto& f : fields) {
    if (f.name == field) return f.size;
  }
  throw ConfigError("unknown field: " + std::string(field));
}

void ModelConfig::validate() const {
  if (layers == 0 || hidden == 0 || heads == 0) {
    throw ConfigError("layers, hidden and heads must be positive");
  }
  if (hidden % heads != 0) throw ConfigError("hidden width not divisible by heads");
  if ((hidden / heads) % 2 != 0) throw ConfigError("head dimension must be even");
  if (fields.empty() || fields.front().name != kItemField) {
    throw ConfigError("the first field must be 'item'");
  }
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].size < 2) {
      throw ConfigError("vocabulary of field '" + fields[i].name + "' must be >= 2");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (fields[j].name == fields[i].name) {
        throw ConfigError("duplicate field '" + fields[i].name + "'");
      }
    }
  }
  if (max_seq_len < 2) throw ConfigError("max_seq_len must be >= 2");
  if (segments != 2) throw ConfigError("segment count must be 2");
  for (auto d : resolved_head_hidden()) {
    if (d == 0) throw ConfigError("head hidden sizes must be positive");
  }
  if (!(norm_eps > 0)) throw ConfigError("norm epsilon must be positive");
}

}  // namespace gpsd
