// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>

#include "gpsd/model.hpp"

namespace gpsd {

namespace {

constexpr double kInitStd = 0.02;

std::string layer_name(std::size_t layer, std::string_view part) {
  return "layer" + std::to_string(layer) + "." + std::string(part);
}

}  // namespace

template <typename Real>
std::string Transformer<Real>::table_name(std::string_view field) {
  return "emb." + std::string(field);
}

template <typename Real>
Transformer<Real>::Transformer(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  config_.validate();
  const std::size_t v = config_.hidden;
  const std::size_t ffn = config_.resolved_ffn_dim();

  for (const auto& f : config_.fields) {
    params_.add(table_name(f.name), {f.size, v}, Partition::kSparse, false);
  }
  params_.add("seg", {config_.segments, v}, Partition::kDense, false);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    params_.add(layer_name(l, "attn_norm"), {v}, Partition::kDense, false);
    for (auto w : {"wq", "wk", "wv", "wo"}) {
      params_.add(layer_name(l, w), {v, v}, Partition::kDense, true);
    }
    params_.add(layer_name(l, "ffn_norm"), {v}, Partition::kDense, false);
    params_.add(layer_name(l, "w_gate"), {v, ffn}, Partition::kDense, true);
    params_.add(layer_name(l, "w_up"), {v, ffn}, Partition::kDense, true);
    params_.add(layer_name(l, "w_down"), {ffn, v}, Partition::kDense, true);
  }
  params_.add("final_norm", {v}, Partition::kDense, false);
  std::size_t in = v + config_.extra_features;
  const auto dims = config_.resolved_head_hidden();
  for (std::size_t i = 0; i <= dims.size(); ++i) {
    const std::size_t out = i < dims.size() ? dims[i] : 1;
    params_.add("head.w" + std::to_string(i), {in, out}, Partition::kDense, true);
    params_.add("head.b" + std::to_string(i), {out}, Partition::kDense, false);
    in = out;
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kInitStd);
  for (auto& p : params_.params()) {
    const bool is_gain = p.name.ends_with("norm");
    const bool is_bias = p.name.starts_with("head.b");
    for (auto& x : p.value) {
      if (is_gain) {
        x = Real(1);
      } else if (is_bias) {
        x = Real(0);
      } else {
        x = static_cast<Real>(normal(rng));
      }
    }
  }
}

template <typename Real>
Tensor<Real> Transformer<Real>::bind(Graph<Real>& g, std::string_view name) {
  auto& p = params_.at(name);
  return g.parameter(p, !params_.is_frozen(name));
}

template <typename Real>
void Transformer<Real>::validate_batch(const TokenBatch& b) const {
  const std::size_t rows = b.rows();
  if (b.ids.size() != config_.fields.size()) {
    throw ShapeError("batch carries " + std::to_string(b.ids.size()) +
                     " fields, model expects " +
                     std::to_string(config_.fields.size()));
  }
  for (std::size_t f = 0; f < b.ids.size(); ++f) {
    if (b.ids[f].size() != rows) throw ShapeError("field ids do not match batch*seq");
    for (auto id : b.ids[f]) {
      if (id < 0 || static_cast<std::size_t>(id) >= config_.fields[f].size) {
        throw std::out_of_range("out-of-vocabulary id " + std::to_string(id) +
                                " for field '" + config_.fields[f].name + "'");
      }
    }
  }
  if (b.segments.size() != rows || b.positions.size() != rows ||
      b.lengths.size() != b.batch) {
    throw ShapeError("segments/positions/lengths do not match batch layout");
  }
  for (auto s : b.segments) {
    if (s < 0 || static_cast<std::size_t>(s) >= config_.segments) {
      throw std::out_of_range("segment id out of range");
    }
  }
  const std::size_t limit = config_.max_seq_len + (b.has_candidate ? 1 : 0);
  for (auto len : b.lengths) {
    if (len > limit) {
      throw std::length_error("sequence of length " + std::to_string(len) +
                              " exceeds limit " + std::to_string(limit));
    }
    if (len > b.seq) throw ShapeError("length exceeds padded sequence");
  }
}

template <typename Real>
Tensor<Real> Transformer<Real>::encode(Graph<Real>& g, const TokenBatch& b,
                                       bool use_segments) {
  validate_batch(b);
  const std::size_t heads = config_.heads;
  const Real eps = static_cast<Real>(config_.norm_eps);

  Tensor<Real> x = gather(bind(g, table_name(config_.fields[0].name)),
                          std::span<const std::int32_t>(b.ids[0]));
  for (std::size_t f = 1; f < config_.fields.size(); ++f) {
    x = add(x, gather(bind(g, table_name(config_.fields[f].name)),
                      std::span<const std::int32_t>(b.ids[f])));
  }
  if (use_segments) {
    x = add(x, gather(bind(g, "seg"), std::span<const std::int32_t>(b.segments)));
  }

  AttentionLayout layout;
  layout.batch = b.batch;
  layout.seq = b.seq;
  layout.heads = heads;
  layout.causal = config_.direction == Direction::kCausal;
  layout.lengths = b.lengths;

  for (std::size_t l = 0; l < config_.layers; ++l) {
    auto h = rms_norm(x, bind(g, layer_name(l, "attn_norm")), eps);
    auto q = rope(matmul(h, bind(g, layer_name(l, "wq"))),
                  std::span<const std::int32_t>(b.positions), heads,
                  config_.rope_base);
    auto k = rope(matmul(h, bind(g, layer_name(l, "wk"))),
                  std::span<const std::int32_t>(b.positions), heads,
                  config_.rope_base);
    auto v = matmul(h, bind(g, layer_name(l, "wv")));
    auto att = attention(q, k, v, layout);
    x = add(x, matmul(att, bind(g, layer_name(l, "wo"))));

    h = rms_norm(x, bind(g, layer_name(l, "ffn_norm")), eps);
    auto gate = silu(matmul(h, bind(g, layer_name(l, "w_gate"))));
    auto up = matmul(h, bind(g, layer_name(l, "w_up")));
    x = add(x, matmul(mul(gate, up), bind(g, layer_name(l, "w_down"))));
  }
  return rms_norm(x, bind(g, "final_norm"), eps);
}

template <typename Real>
Tensor<Real> Transformer<Real>::generative_logits(Graph<Real>& g,
                                                  const Tensor<Real>& hidden,
                                                  std::span<const std::int32_t> ids) {
  auto rows = gather(bind(g, table_name(kItemField)), ids);
  return matmul_nt(hidden, rows);
}

template <typename Real>
Tensor<Real> Transformer<Real>::discriminative_head(Graph<Real>& g,
                                                    const Tensor<Real>& state,
                                                    const Tensor<Real>* extra) {
  if (state.shape().size() != 2 || state.shape()[1] != config_.hidden) {
    throw ShapeError("head input must be [n, hidden], got " + shape_str(state.shape()));
  }
  Tensor<Real> x = state;
  if (config_.extra_features > 0) {
    if (!extra || extra->shape().size() != 2 ||
        extra->shape()[0] != state.shape()[0] ||
        extra->shape()[1] != config_.extra_features) {
      throw ShapeError("head expects " + std::to_string(config_.extra_features) +
                       " extra features per example");
    }
    const Tensor<Real> parts[] = {state, *extra};
    x = concat<Real>(parts, 1);
  } else if (extra && extra->size() != 0) {
    throw ShapeError("head configured without extra features");
  }
  const std::size_t layers = config_.resolved_head_hidden().size() + 1;
  for (std::size_t i = 0; i < layers; ++i) {
    x = add_row(matmul(x, bind(g, "head.w" + std::to_string(i))),
                bind(g, "head.b" + std::to_string(i)));
    if (i + 1 < layers) x = silu(x);
  }
  return sigmoid(x);
}

template <typename Real>
std::vector<SparseTableInfo> Transformer<Real>::sparse_tables() const {
  std::vector<SparseTableInfo> out;
  for (const auto& f : config_.fields) out.push_back({f.name, f.size, config_.hidden});
  return out;
}

template <typename Real>
void Transformer<Real>::load_sparse_table(const std::string& field,
                                          std::span<const double> rows) {
  auto& p = params_.at(table_name(field));
  if (rows.size() != p.value.size()) {
    throw ShapeError("sparse table '" + field + "' expects " +
                     std::to_string(p.value.size()) + " values");
  }
  for (std::size_t i = 0; i < rows.size(); ++i) p.value[i] = static_cast<Real>(rows[i]);
}

template <typename Real>
void Transformer<Real>::freeze_sparse_table(const std::string& field) {
  params_.freeze(table_name(field));
}

template class Transformer<float>;
template class Transformer<double>;

}  // namespace gpsd
