// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gpsd/tensor.hpp"

namespace gpsd {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kParameter: return "parameter";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kMatmulNT: return "matmul_nt";
    case OpKind::kAdd: return "add";
    case OpKind::kAddRow: return "add_row";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSilu: return "silu";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kReshape: return "reshape";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kConcat: return "concat";
    case OpKind::kGather: return "gather";
    case OpKind::kRmsNorm: return "rms_norm";
    case OpKind::kRope: return "rope";
    case OpKind::kAttention: return "attention";
    case OpKind::kSampledSoftmax: return "sampled_softmax";
    case OpKind::kBinaryCrossEntropy: return "binary_cross_entropy";
  }
  return "unknown";
}

template <typename Real>
void check_finite(std::span<const Real> values, std::string_view what) {
  // x - x is 0 for finite x and NaN otherwise; the sum vectorizes.
  Real probe = 0;
#pragma omp simd reduction(+ : probe)
  for (std::size_t i = 0; i < values.size(); ++i) probe += values[i] - values[i];
  if (probe == Real(0)) return;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << "non-finite value " << values[i] << " at index " << i << " in "
         << what;
      throw NumericError(os.str());
    }
  }
}

template void check_finite<float>(std::span<const float>, std::string_view);
template void check_finite<double>(std::span<const double>, std::string_view);

// ---------------------------------------------------------------------------
// ParameterStore

template <typename Real>
Parameter<Real>& ParameterStore<Real>::add(std::string name, Shape shape,
                                           Partition partition, bool decay) {
  if (index_.count(name)) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  if (shape.empty() || numel(shape) == 0) {
    throw ShapeError("parameter " + name + " has empty shape");
  }
  Parameter<Real> p;
  p.name = name;
  p.shape = std::move(shape);
  p.partition = partition;
  p.decay = decay;
  p.value.assign(numel(p.shape), Real(0));
  p.grad.assign(p.value.size(), Real(0));
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return params_.back();
}

template <typename Real>
bool ParameterStore<Real>::contains(std::string_view name) const {
  return index_.count(std::string(name)) > 0;
}

template <typename Real>
Parameter<Real>& ParameterStore<Real>::at(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw std::out_of_range("unknown parameter: " + std::string(name));
  }
  return params_[it->second];
}

template <typename Real>
const Parameter<Real>& ParameterStore<Real>::at(std::string_view name) const {
  return const_cast<ParameterStore*>(this)->at(name);
}

template <typename Real>
std::vector<std::string> ParameterStore<Real>::names(Partition partition) const {
  std::vector<std::string> out;
  for (const auto& p : params_) {
    if (p.partition == partition) out.push_back(p.name);
  }
  return out;
}

template <typename Real>
std::size_t ParameterStore<Real>::count(Partition partition) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.partition == partition) n += p.size();
  }
  return n;
}

template <typename Real>
void ParameterStore<Real>::freeze(const std::string& name) {
  at(name);
  if (!is_frozen(name)) frozen_.push_back(name);
}

template <typename Real>
bool ParameterStore<Real>::is_frozen(std::string_view name) const {
  return std::find(frozen_.begin(), frozen_.end(), name) != frozen_.end();
}

template <typename Real>
void ParameterStore<Real>::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), Real(0));
}

// ---------------------------------------------------------------------------
// Tensor

template <typename Real>
const Shape& Tensor<Real>::shape() const {
  return graph_->shape(id_);
}

template <typename Real>
std::span<const Real> Tensor<Real>::value() const {
  return graph_->value(id_);
}

template <typename Real>
std::span<Real> Tensor<Real>::grad() const {
  return graph_->grad(id_);
}

template <typename Real>
Real Tensor<Real>::item() const {
  if (size() != 1) {
    throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
  }
  return value()[0];
}

template <typename Real>
bool Tensor<Real>::requires_grad() const {
  return graph_->requires_grad(id_);
}

// ---------------------------------------------------------------------------
// Graph

template <typename Real>
Tensor<Real> Graph<Real>::constant(Shape shape, std::vector<Real> values) {
  if (numel(shape) != values.size()) {
    throw ShapeError("constant: shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  check_finite<Real>(values, "constant");
  Node n;
  n.kind = OpKind::kConstant;
  n.shape = std::move(shape);
  n.value = std::move(values);
  nodes_.push_back(std::move(n));
  return Tensor<Real>(this, nodes_.size() - 1);
}

template <typename Real>
Tensor<Real> Graph<Real>::parameter(Parameter<Real>& param, bool trainable) {
  Node n;
  n.kind = OpKind::kParameter;
  n.shape = param.shape;
  n.param = &param;
  n.requires_grad = trainable && grad_enabled_;
  nodes_.push_back(std::move(n));
  return Tensor<Real>(this, nodes_.size() - 1);
}

template <typename Real>
Tensor<Real> Graph<Real>::record(OpKind kind, Shape shape,
                                 std::vector<Real> values,
                                 std::vector<std::size_t> inputs,
                                 BackwardFn backward) {
  if (numel(shape) != values.size()) {
    throw ShapeError(std::string(op_name(kind)) + ": output shape mismatch");
  }
  check_finite<Real>(values, op_name(kind));
  Node n;
  n.kind = kind;
  n.shape = std::move(shape);
  n.value = std::move(values);
  for (auto in : inputs) {
    if (in >= nodes_.size()) {
      throw std::logic_error("record: input node does not exist");
    }
    n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  }
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Tensor<Real>(this, nodes_.size() - 1);
}

template <typename Real>
std::span<const Real> Graph<Real>::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (n.param) return n.param->value;
  return n.value;
}

template <typename Real>
std::span<Real> Graph<Real>::grad(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.param) return n.param->grad;
  if (n.grad.empty()) n.grad.assign(numel(n.shape), Real(0));
  return n.grad;
}

template <typename Real>
bool Graph<Real>::has_grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.param ? n.requires_grad : !n.grad.empty();
}

template <typename Real>
void Graph<Real>::backward(const Tensor<Real>& loss) {
  if (&loss.graph() != this) {
    throw std::invalid_argument("backward: loss belongs to another graph");
  }
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " +
                     shape_str(loss.shape()));
  }
  if (!requires_grad(loss.id())) return;
  grad(loss.id())[0] += Real(1);
  // Nodes are appended in evaluation order, so reverse creation order is a
  // valid reverse topological order; each node is visited once.
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, id);
  }
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Graph<float>;
template class Graph<double>;
template class Tensor<float>;
template class Tensor<double>;

}  // namespace gpsd
