// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense tensors with tape-based reverse-mode differentiation.
//
// A Graph owns every intermediate value created while evaluating one
// forward pass. Tensors are lightweight handles (graph pointer + node id).
// Parameters live outside the graph in a ParameterStore and are bound into
// a graph as leaves; their gradients accumulate directly into the store.
// Parameters must not be modified while a graph that references them is
// still alive.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace gpsd {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Partition : std::uint8_t { kSparse = 0, kDense = 1 };

template <typename Real>
struct Parameter {
  std::string name;
  Shape shape;
  Partition partition = Partition::kDense;
  bool decay = false;  // receives decoupled weight decay
  std::vector<Real> value;
  std::vector<Real> grad;

  std::size_t size() const { return value.size(); }
};

// Named parameters in insertion order, each tagged sparse or dense, plus
// the set of frozen names.
template <typename Real>
class ParameterStore {
 public:
  // The returned reference is invalidated by the next add().
  Parameter<Real>& add(std::string name, Shape shape, Partition partition,
                       bool decay);

  bool contains(std::string_view name) const;
  Parameter<Real>& at(std::string_view name);
  const Parameter<Real>& at(std::string_view name) const;

  std::vector<Parameter<Real>>& params() { return params_; }
  const std::vector<Parameter<Real>>& params() const { return params_; }

  std::vector<std::string> names(Partition partition) const;
  std::size_t count(Partition partition) const;

  void freeze(const std::string& name);
  void clear_frozen() { frozen_.clear(); }
  bool is_frozen(std::string_view name) const;
  const std::vector<std::string>& frozen() const { return frozen_; }

  void zero_grad();

 private:
  std::vector<Parameter<Real>> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> frozen_;
};

enum class OpKind : std::uint8_t {
  kConstant,
  kParameter,
  kMatmul,
  kMatmulNT,
  kAdd,
  kAddRow,
  kMul,
  kScale,
  kSigmoid,
  kSilu,
  kExp,
  kLog,
  kSoftmax,
  kSum,
  kMean,
  kReshape,
  kTranspose,
  kConcat,
  kGather,
  kRmsNorm,
  kRope,
  kAttention,
  kSampledSoftmax,
  kBinaryCrossEntropy,
};

std::string_view op_name(OpKind kind);

template <typename Real>
class Graph;

template <typename Real>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph<Real>* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph<Real>& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Shape& shape() const;
  std::size_t size() const { return numel(shape()); }
  std::span<const Real> value() const;
  std::span<Real> grad() const;
  Real item() const;
  bool requires_grad() const;

 private:
  Graph<Real>* graph_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Real>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  struct Node {
    OpKind kind = OpKind::kConstant;
    Shape shape;
    std::vector<std::size_t> inputs;
    std::vector<Real> value;
    std::vector<Real> grad;
    Parameter<Real>* param = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  // With gradients disabled every parameter binds as a constant leaf, so
  // no backward closures are kept (inference).
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Tensor<Real> constant(Shape shape, std::vector<Real> values);
  // Binds a stored parameter as a leaf. Frozen parameters (or any when
  // `trainable` is false) do not request gradients.
  Tensor<Real> parameter(Parameter<Real>& param, bool trainable = true);

  // Appends an op record. `inputs` must already exist in this graph.
  Tensor<Real> record(OpKind kind, Shape shape, std::vector<Real> values,
                      std::vector<std::size_t> inputs, BackwardFn backward);

  // Reverse sweep from a scalar loss. Gradients accumulate into existing
  // parameter gradients.
  void backward(const Tensor<Real>& loss);

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  std::span<const Real> value(std::size_t id) const;
  std::span<Real> grad(std::size_t id);  // allocates zeros on first use
  bool has_grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }

 private:
  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;
extern template class Graph<float>;
extern template class Graph<double>;
extern template class Tensor<float>;
extern template class Tensor<double>;

// Throws NumericError naming `what` if any value is NaN or infinite.
template <typename Real>
void check_finite(std::span<const Real> values, std::string_view what);

}  // namespace gpsd
