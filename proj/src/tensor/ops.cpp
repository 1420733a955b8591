// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include "gpsd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "gpsd/kernels.hpp"

namespace gpsd {

namespace {

using kernels::GemmShape;
using kernels::Trans;

template <typename Real>
Graph<Real>& same_graph(const Tensor<Real>& a, const Tensor<Real>& b,
                        const char* op) {
  if (&a.graph() != &b.graph()) {
    throw std::invalid_argument(std::string(op) + ": tensors from different graphs");
  }
  return a.graph();
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got " + shape_str(s));
  }
}

template <typename Real>
std::vector<Real> copy_values(const Tensor<Real>& t) {
  auto v = t.value();
  return std::vector<Real>(v.begin(), v.end());
}

template <typename Real, typename Fn, typename DFn>
Tensor<Real> unary(const Tensor<Real>& a, OpKind kind, Fn fn, DFn dfn) {
  auto& g = a.graph();
  auto x = a.value();
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fn(x[i]);
  const std::size_t ia = a.id();
  // dfn(x, y) is the local derivative given input and output.
  return g.record(kind, a.shape(), std::move(out), {ia},
                  [ia, dfn](Graph<Real>& g, std::size_t self) {
                    if (!g.requires_grad(ia)) return;
                    auto x = g.value(ia);
                    auto y = g.value(self);
                    auto dy = g.grad(self);
                    auto dx = g.grad(ia);
                    for (std::size_t i = 0; i < dx.size(); ++i) {
                      dx[i] += dy[i] * dfn(x[i], y[i]);
                    }
                  });
}

template <typename Real>
Real sigmoid_scalar(Real x) {
  if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

}  // namespace

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  auto& g = same_graph(a, b, "matmul");
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<Real> out(m * n);
  kernels::parallel::gemm(Trans::kNo, Trans::kNo, GemmShape{m, n, k},
                          a.value().data(), b.value().data(), out.data(), false);
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(OpKind::kMatmul, {m, n}, std::move(out), {ia, ib},
                  [ia, ib, m, n, k](Graph<Real>& g, std::size_t self) {
                    auto dc = g.grad(self);
                    if (g.requires_grad(ia)) {
                      kernels::parallel::gemm(Trans::kNo, Trans::kYes,
                                              GemmShape{m, k, n}, dc.data(),
                                              g.value(ib).data(),
                                              g.grad(ia).data(), true);
                    }
                    if (g.requires_grad(ib)) {
                      kernels::parallel::gemm(Trans::kYes, Trans::kNo,
                                              GemmShape{k, n, m},
                                              g.value(ia).data(), dc.data(),
                                              g.grad(ib).data(), true);
                    }
                  });
}

template <typename Real>
Tensor<Real> matmul_nt(const Tensor<Real>& a, const Tensor<Real>& b) {
  auto& g = same_graph(a, b, "matmul_nt");
  require_rank(a.shape(), 2, "matmul_nt");
  require_rank(b.shape(), 2, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) {
    throw ShapeError("matmul_nt: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + "^T");
  }
  std::vector<Real> out(m * n);
  kernels::parallel::gemm(Trans::kNo, Trans::kYes, GemmShape{m, n, k},
                          a.value().data(), b.value().data(), out.data(), false);
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(OpKind::kMatmulNT, {m, n}, std::move(out), {ia, ib},
                  [ia, ib, m, n, k](Graph<Real>& g, std::size_t self) {
                    auto dc = g.grad(self);
                    if (g.requires_grad(ia)) {
                      kernels::parallel::gemm(Trans::kNo, Trans::kNo,
                                              GemmShape{m, k, n}, dc.data(),
                                              g.value(ib).data(),
                                              g.grad(ia).data(), true);
                    }
                    if (g.requires_grad(ib)) {
                      kernels::parallel::gemm(Trans::kYes, Trans::kNo,
                                              GemmShape{n, k, m}, dc.data(),
                                              g.value(ia).data(),
                                              g.grad(ib).data(), true);
                    }
                  });
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  auto& g = same_graph(a, b, "add");
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  auto x = a.value();
  auto y = b.value();
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(OpKind::kAdd, a.shape(), std::move(out), {ia, ib},
                  [ia, ib](Graph<Real>& g, std::size_t self) {
                    auto dy = g.grad(self);
                    for (auto in : {ia, ib}) {
                      if (!g.requires_grad(in)) continue;
                      auto dx = g.grad(in);
                      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
                    }
                  });
}

template <typename Real>
Tensor<Real> add_row(const Tensor<Real>& a, const Tensor<Real>& row) {
  auto& g = same_graph(a, row, "add_row");
  require_rank(a.shape(), 2, "add_row");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (row.size() != n) {
    throw ShapeError("add_row: row of " + std::to_string(row.size()) +
                     " for width " + std::to_string(n));
  }
  auto x = a.value();
  auto r = row.value();
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] + r[j];
  }
  const std::size_t ia = a.id(), ir = row.id();
  return g.record(OpKind::kAddRow, a.shape(), std::move(out), {ia, ir},
                  [ia, ir, m, n](Graph<Real>& g, std::size_t self) {
                    auto dy = g.grad(self);
                    if (g.requires_grad(ia)) {
                      auto dx = g.grad(ia);
                      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
                    }
                    if (g.requires_grad(ir)) {
                      auto dr = g.grad(ir);
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < n; ++j) dr[j] += dy[i * n + j];
                      }
                    }
                  });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  auto& g = same_graph(a, b, "mul");
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  auto x = a.value();
  auto y = b.value();
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(OpKind::kMul, a.shape(), std::move(out), {ia, ib},
                  [ia, ib](Graph<Real>& g, std::size_t self) {
                    auto dy = g.grad(self);
                    if (g.requires_grad(ia)) {
                      auto dx = g.grad(ia);
                      auto y = g.value(ib);
                      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * y[i];
                    }
                    if (g.requires_grad(ib)) {
                      auto dx = g.grad(ib);
                      auto y = g.value(ia);
                      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * y[i];
                    }
                  });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor) {
  return unary<Real>(
      a, OpKind::kScale, [factor](Real x) { return x * factor; },
      [factor](Real, Real) { return factor; });
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& a) {
  return unary<Real>(
      a, OpKind::kSigmoid, [](Real x) { return sigmoid_scalar(x); },
      [](Real, Real y) { return y * (Real(1) - y); });
}

template <typename Real>
Tensor<Real> silu(const Tensor<Real>& a) {
  return unary<Real>(
      a, OpKind::kSilu, [](Real x) { return x * sigmoid_scalar(x); },
      [](Real x, Real) {
        const Real s = sigmoid_scalar(x);
        return s * (Real(1) + x * (Real(1) - s));
      });
}

template <typename Real>
Tensor<Real> exp(const Tensor<Real>& a) {
  return unary<Real>(
      a, OpKind::kExp, [](Real x) { return std::exp(x); },
      [](Real, Real y) { return y; });
}

template <typename Real>
Tensor<Real> log(const Tensor<Real>& a) {
  return unary<Real>(
      a, OpKind::kLog, [](Real x) { return std::log(x); },
      [](Real x, Real) { return Real(1) / x; });
}

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& a) {
  auto& g = a.graph();
  if (a.shape().empty()) throw ShapeError("softmax: scalar input");
  const std::size_t cols = a.shape().back();
  const std::size_t rows = a.size() / cols;
  auto x = a.value();
  std::vector<Real> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = x.data() + r * cols;
    Real* yr = out.data() + r * cols;
    const Real mx = *std::max_element(xr, xr + cols);
    Real total = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      total += yr[j];
    }
    for (std::size_t j = 0; j < cols; ++j) yr[j] /= total;
  }
  const std::size_t ia = a.id();
  return g.record(OpKind::kSoftmax, a.shape(), std::move(out), {ia},
                  [ia, rows, cols](Graph<Real>& g, std::size_t self) {
                    if (!g.requires_grad(ia)) return;
                    auto y = g.value(self);
                    auto dy = g.grad(self);
                    auto dx = g.grad(ia);
                    for (std::size_t r = 0; r < rows; ++r) {
                      Real dot = 0;
                      for (std::size_t j = 0; j < cols; ++j) {
                        dot += y[r * cols + j] * dy[r * cols + j];
                      }
                      for (std::size_t j = 0; j < cols; ++j) {
                        dx[r * cols + j] += y[r * cols + j] * (dy[r * cols + j] - dot);
                      }
                    }
                  });
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a) {
  auto& g = a.graph();
  Real total = 0;
  for (Real x : a.value()) total += x;
  const std::size_t ia = a.id();
  return g.record(OpKind::kSum, {1}, {total}, {ia},
                  [ia](Graph<Real>& g, std::size_t self) {
                    if (!g.requires_grad(ia)) return;
                    const Real dy = g.grad(self)[0];
                    for (auto& d : g.grad(ia)) d += dy;
                  });
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& a) {
  auto& g = a.graph();
  Real total = 0;
  for (Real x : a.value()) total += x;
  const Real n = static_cast<Real>(a.size());
  const std::size_t ia = a.id();
  return g.record(OpKind::kMean, {1}, {total / n}, {ia},
                  [ia, n](Graph<Real>& g, std::size_t self) {
                    if (!g.requires_grad(ia)) return;
                    const Real dy = g.grad(self)[0] / n;
                    for (auto& d : g.grad(ia)) d += dy;
                  });
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  auto& g = a.graph();
  const std::size_t ia = a.id();
  return g.record(OpKind::kReshape, std::move(shape), copy_values(a), {ia},
                  [ia](Graph<Real>& g, std::size_t self) {
                    if (!g.requires_grad(ia)) return;
                    auto dy = g.grad(self);
                    auto dx = g.grad(ia);
                    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
                  });
}

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
  require_rank(a.shape(), 2, "transpose");
  auto& g = a.graph();
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  auto x = a.value();
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  }
  const std::size_t ia = a.id();
  return g.record(OpKind::kTranspose, {n, m}, std::move(out), {ia},
                  [ia, m, n](Graph<Real>& g, std::size_t self) {
                    if (!g.requires_grad(ia)) return;
                    auto dy = g.grad(self);
                    auto dx = g.grad(ia);
                    for (std::size_t i = 0; i < m; ++i) {
                      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += dy[j * m + i];
                    }
                  });
}

template <typename Real>
Tensor<Real> concat(std::span<const Tensor<Real>> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
  auto& g = parts[0].graph();
  std::vector<std::size_t> ids;
  std::size_t rows = 0, cols = 0;
  for (const auto& p : parts) {
    if (&p.graph() != &g) throw std::invalid_argument("concat: mixed graphs");
    require_rank(p.shape(), 2, "concat");
    const std::size_t other = axis == 0 ? p.shape()[1] : p.shape()[0];
    const std::size_t fixed = axis == 0 ? cols : rows;
    if (!ids.empty() && other != fixed) {
      throw ShapeError("concat: incompatible " + shape_str(p.shape()));
    }
    if (axis == 0) {
      rows += p.shape()[0];
      cols = p.shape()[1];
    } else {
      cols += p.shape()[1];
      rows = p.shape()[0];
    }
    ids.push_back(p.id());
  }
  std::vector<Real> out(rows * cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    auto x = p.value();
    const std::size_t pr = p.shape()[0], pc = p.shape()[1];
    for (std::size_t i = 0; i < pr; ++i) {
      for (std::size_t j = 0; j < pc; ++j) {
        if (axis == 0) {
          out[(offset + i) * cols + j] = x[i * pc + j];
        } else {
          out[i * cols + offset + j] = x[i * pc + j];
        }
      }
    }
    offset += axis == 0 ? pr : pc;
  }
  return g.record(OpKind::kConcat, {rows, cols}, std::move(out), ids,
                  [ids, axis, cols](Graph<Real>& g, std::size_t self) {
                    auto dy = g.grad(self);
                    std::size_t offset = 0;
                    for (auto id : ids) {
                      const std::size_t pr = g.shape(id)[0], pc = g.shape(id)[1];
                      if (g.requires_grad(id)) {
                        auto dx = g.grad(id);
                        for (std::size_t i = 0; i < pr; ++i) {
                          for (std::size_t j = 0; j < pc; ++j) {
                            dx[i * pc + j] += axis == 0
                                                  ? dy[(offset + i) * cols + j]
                                                  : dy[i * cols + offset + j];
                          }
                        }
                      }
                      offset += axis == 0 ? pr : pc;
                    }
                  });
}

template <typename Real>
Tensor<Real> gather(const Tensor<Real>& table, std::span<const std::int32_t> ids) {
  require_rank(table.shape(), 2, "gather");
  auto& g = table.graph();
  const std::size_t n = table.shape()[0], d = table.shape()[1];
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= n) {
      throw std::out_of_range("gather: id " + std::to_string(id) +
                              " outside [0," + std::to_string(n) + ")");
    }
  }
  auto x = table.value();
  std::vector<Real> out(ids.size() * d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    std::copy_n(x.data() + static_cast<std::size_t>(ids[r]) * d, d,
                out.data() + r * d);
  }
  const std::size_t it = table.id();
  std::vector<std::int32_t> rows(ids.begin(), ids.end());
  return g.record(OpKind::kGather, {ids.size(), d}, std::move(out), {it},
                  [it, d, rows = std::move(rows)](Graph<Real>& g, std::size_t self) {
                    if (!g.requires_grad(it)) return;
                    auto dy = g.grad(self);
                    auto dx = g.grad(it);
                    for (std::size_t r = 0; r < rows.size(); ++r) {
                      Real* dst = dx.data() + static_cast<std::size_t>(rows[r]) * d;
                      const Real* src = dy.data() + r * d;
                      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                    }
                  });
}

template <typename Real>
Tensor<Real> rms_norm(const Tensor<Real>& x, const Tensor<Real>& gain, Real eps) {
  auto& g = same_graph(x, gain, "rms_norm");
  if (x.shape().empty()) throw ShapeError("rms_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gain.size() != d) {
    throw ShapeError("rms_norm: gain of " + std::to_string(gain.size()) +
                     " for width " + std::to_string(d));
  }
  const std::size_t rows = x.size() / d;
  auto xv = x.value();
  auto gv = gain.value();
  std::vector<Real> out(xv.size());
  auto inv = std::make_shared<std::vector<Real>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = xv.data() + r * d;
    Real ms = 0;
    for (std::size_t j = 0; j < d; ++j) ms += xr[j] * xr[j];
    ms /= static_cast<Real>(d);
    const Real ir = Real(1) / std::sqrt(ms + eps);
    (*inv)[r] = ir;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xr[j] * ir * gv[j];
  }
  const std::size_t ix = x.id(), ig = gain.id();
  return g.record(
      OpKind::kRmsNorm, x.shape(), std::move(out), {ix, ig},
      [ix, ig, rows, d, inv](Graph<Real>& g, std::size_t self) {
        auto dy = g.grad(self);
        auto xv = g.value(ix);
        auto gv = g.value(ig);
        if (g.requires_grad(ix)) {
          auto dx = g.grad(ix);
          for (std::size_t r = 0; r < rows; ++r) {
            const Real ir = (*inv)[r];
            Real dot = 0;
            for (std::size_t j = 0; j < d; ++j) {
              dot += dy[r * d + j] * gv[j] * xv[r * d + j];
            }
            const Real coef = ir * ir * ir * dot / static_cast<Real>(d);
            for (std::size_t j = 0; j < d; ++j) {
              dx[r * d + j] += ir * gv[j] * dy[r * d + j] - coef * xv[r * d + j];
            }
          }
        }
        if (g.requires_grad(ig)) {
          auto dg = g.grad(ig);
          for (std::size_t r = 0; r < rows; ++r) {
            const Real ir = (*inv)[r];
            for (std::size_t j = 0; j < d; ++j) {
              dg[j] += dy[r * d + j] * xv[r * d + j] * ir;
            }
          }
        }
      });
}

template <typename Real>
Tensor<Real> rope(const Tensor<Real>& x, std::span<const std::int32_t> positions,
                  std::size_t heads, double base) {
  require_rank(x.shape(), 2, "rope");
  auto& g = x.graph();
  const std::size_t rows = x.shape()[0], width = x.shape()[1];
  if (heads == 0 || width % heads != 0) {
    throw ShapeError("rope: width " + std::to_string(width) +
                     " not divisible by heads " + std::to_string(heads));
  }
  const std::size_t hd = width / heads;
  if (hd % 2 != 0) throw ShapeError("rope: odd head dimension " + std::to_string(hd));
  if (positions.size() != rows) throw ShapeError("rope: one position per row required");
  // Angles computed in double regardless of Real.
  auto cs = std::make_shared<std::vector<Real>>(rows * hd);  // cos,sin interleaved
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < hd / 2; ++i) {
      const double theta = std::pow(base, -2.0 * static_cast<double>(i) /
                                              static_cast<double>(hd));
      const double angle = static_cast<double>(positions[r]) * theta;
      (*cs)[r * hd + 2 * i] = static_cast<Real>(std::cos(angle));
      (*cs)[r * hd + 2 * i + 1] = static_cast<Real>(std::sin(angle));
    }
  }
  auto xv = x.value();
  std::vector<Real> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < hd / 2; ++i) {
        const std::size_t a = r * width + h * hd + 2 * i;
        const Real c = (*cs)[r * hd + 2 * i], s = (*cs)[r * hd + 2 * i + 1];
        out[a] = xv[a] * c - xv[a + 1] * s;
        out[a + 1] = xv[a] * s + xv[a + 1] * c;
      }
    }
  }
  const std::size_t ix = x.id();
  return g.record(OpKind::kRope, x.shape(), std::move(out), {ix},
                  [ix, rows, width, heads, hd, cs](Graph<Real>& g, std::size_t self) {
                    if (!g.requires_grad(ix)) return;
                    auto dy = g.grad(self);
                    auto dx = g.grad(ix);
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t h = 0; h < heads; ++h) {
                        for (std::size_t i = 0; i < hd / 2; ++i) {
                          const std::size_t a = r * width + h * hd + 2 * i;
                          const Real c = (*cs)[r * hd + 2 * i];
                          const Real s = (*cs)[r * hd + 2 * i + 1];
                          dx[a] += dy[a] * c + dy[a + 1] * s;
                          dx[a + 1] += -dy[a] * s + dy[a + 1] * c;
                        }
                      }
                    }
                  });
}

template <typename Real>
Tensor<Real> attention(const Tensor<Real>& q, const Tensor<Real>& k,
                       const Tensor<Real>& v, const AttentionLayout& layout) {
  auto& g = same_graph(q, k, "attention");
  same_graph(q, v, "attention");
  require_rank(q.shape(), 2, "attention");
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw ShapeError("attention: q/k/v shapes differ");
  }
  const std::size_t width = q.shape()[1];
  if (layout.batch * layout.seq != q.shape()[0]) {
    throw ShapeError("attention: rows " + std::to_string(q.shape()[0]) +
                     " != batch*seq");
  }
  if (layout.heads == 0 || width % layout.heads != 0) {
    throw ShapeError("attention: width not divisible by heads");
  }
  if (layout.lengths.size() != layout.batch) {
    throw ShapeError("attention: one length per sequence required");
  }
  for (auto len : layout.lengths) {
    if (len > layout.seq) throw ShapeError("attention: length exceeds padded seq");
  }
  const kernels::AttentionShape shape{layout.batch, layout.seq, layout.heads,
                                      width / layout.heads, layout.causal};
  auto probs = std::make_shared<std::vector<Real>>(layout.batch * layout.heads *
                                                   layout.seq * layout.seq);
  auto lengths = std::make_shared<std::vector<std::size_t>>(layout.lengths);
  std::vector<Real> out(q.size());
  kernels::parallel::attention_forward(shape, lengths->data(), q.value().data(),
                                       k.value().data(), v.value().data(),
                                       probs->data(), out.data());
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return g.record(
      OpKind::kAttention, q.shape(), std::move(out), {iq, ik, iv},
      [iq, ik, iv, shape, probs, lengths](Graph<Real>& g, std::size_t self) {
        // Scratch buffers stand in for inputs that do not need gradients.
        std::vector<Real> sq, sk, sv;
        auto target = [&g](std::size_t id, std::vector<Real>& scratch) -> Real* {
          if (g.requires_grad(id)) return g.grad(id).data();
          scratch.assign(g.value(id).size(), Real(0));
          return scratch.data();
        };
        Real* dq = target(iq, sq);
        Real* dk = target(ik, sk);
        Real* dv = target(iv, sv);
        kernels::parallel::attention_backward(
            shape, lengths->data(), g.value(iq).data(), g.value(ik).data(),
            g.value(iv).data(), probs->data(), g.grad(self).data(), dq, dk, dv);
      });
}

template <typename Real>
Tensor<Real> sampled_softmax_loss(const Tensor<Real>& hidden,
                                  const Tensor<Real>& table,
                                  const SampledSoftmaxTargets& spec) {
  auto& g = same_graph(hidden, table, "sampled_softmax_loss");
  require_rank(hidden.shape(), 2, "sampled_softmax_loss");
  require_rank(table.shape(), 2, "sampled_softmax_loss");
  const std::size_t rows = hidden.shape()[0], d = hidden.shape()[1];
  const std::size_t vocab = table.shape()[0];
  if (table.shape()[1] != d) throw ShapeError("sampled_softmax_loss: width mismatch");
  if (spec.targets.size() != rows) {
    throw ShapeError("sampled_softmax_loss: one target per row required");
  }
  const std::size_t rpg = spec.rows_per_group;
  if (rpg == 0 || rows != rpg * spec.negatives.size()) {
    throw ShapeError("sampled_softmax_loss: rows != groups * rows_per_group");
  }
  auto check_id = [vocab](std::int32_t id) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::out_of_range("sampled_softmax_loss: id " + std::to_string(id) +
                              " outside vocabulary of " + std::to_string(vocab));
    }
  };
  for (const auto& negs : spec.negatives) {
    if (negs.empty()) throw std::invalid_argument("sampled_softmax_loss: empty negative set");
    for (auto id : negs) check_id(id);
  }
  for (auto t : spec.targets) {
    if (t >= 0) check_id(t);
  }

  auto hv = hidden.value();
  auto ev = table.value();
  // Per row: softmax weight of the target followed by each negative.
  auto probs = std::make_shared<std::vector<std::vector<Real>>>(spec.negatives.size());
  double total = 0;
  std::vector<Real> neg_rows, neg_logits;
  for (std::size_t grp = 0; grp < spec.negatives.size(); ++grp) {
    const auto& negs = spec.negatives[grp];
    const std::size_t nn = negs.size();
    neg_rows.resize(nn * d);
    for (std::size_t j = 0; j < nn; ++j) {
      std::copy_n(ev.data() + static_cast<std::size_t>(negs[j]) * d, d,
                  neg_rows.data() + j * d);
    }
    neg_logits.resize(rpg * nn);
    kernels::parallel::gemm(Trans::kNo, Trans::kYes, GemmShape{rpg, nn, d},
                            hv.data() + grp * rpg * d, neg_rows.data(),
                            neg_logits.data(), false);
    auto& p = (*probs)[grp];
    p.assign(rpg * (nn + 1), Real(0));
    for (std::size_t r = 0; r < rpg; ++r) {
      const std::int32_t t = spec.targets[grp * rpg + r];
      if (t < 0) continue;
      const Real* h = hv.data() + (grp * rpg + r) * d;
      const Real* et = ev.data() + static_cast<std::size_t>(t) * d;
      Real tl = 0;
      for (std::size_t j = 0; j < d; ++j) tl += h[j] * et[j];
      const Real* nl = neg_logits.data() + r * nn;
      Real mx = tl;
#pragma omp simd reduction(max : mx)
      for (std::size_t j = 0; j < nn; ++j) mx = std::max(mx, nl[j]);
      Real* pr = p.data() + r * (nn + 1);
      pr[0] = std::exp(tl - mx);
      const Real z = pr[0] + kernels::parallel::exp_shifted(nl, mx, pr + 1, nn);
      const Real inv = Real(1) / z;
      for (std::size_t j = 0; j <= nn; ++j) pr[j] *= inv;
      total += static_cast<double>(mx + std::log(z) - tl);
    }
  }
  const std::size_t ih = hidden.id(), ie = table.id();
  auto shared_spec = std::make_shared<SampledSoftmaxTargets>(spec);
  return g.record(
      OpKind::kSampledSoftmax, {1}, {static_cast<Real>(total)}, {ih, ie},
      [ih, ie, d, rpg, probs, shared_spec](Graph<Real>& g, std::size_t self) {
        const Real up = g.grad(self)[0];
        auto hv = g.value(ih);
        auto ev = g.value(ie);
        const bool need_h = g.requires_grad(ih);
        const bool need_e = g.requires_grad(ie);
        std::span<Real> dh = need_h ? g.grad(ih) : std::span<Real>{};
        std::span<Real> de = need_e ? g.grad(ie) : std::span<Real>{};
        std::vector<Real> neg_rows, dlogits, dneg;
        for (std::size_t grp = 0; grp < shared_spec->negatives.size(); ++grp) {
          const auto& negs = shared_spec->negatives[grp];
          const std::size_t nn = negs.size();
          const auto& p = (*probs)[grp];
          dlogits.assign(rpg * nn, Real(0));
          for (std::size_t r = 0; r < rpg; ++r) {
            const std::int32_t t = shared_spec->targets[grp * rpg + r];
            if (t < 0) continue;
            const Real* pr = p.data() + r * (nn + 1);
            for (std::size_t j = 0; j < nn; ++j) dlogits[r * nn + j] = up * pr[j + 1];
            const Real dt = up * (pr[0] - Real(1));
            const std::size_t hrow = (grp * rpg + r) * d;
            const std::size_t erow = static_cast<std::size_t>(t) * d;
            for (std::size_t j = 0; j < d; ++j) {
              if (need_h) dh[hrow + j] += dt * ev[erow + j];
              if (need_e) de[erow + j] += dt * hv[hrow + j];
            }
          }
          if (need_h) {
            neg_rows.resize(nn * d);
            for (std::size_t j = 0; j < nn; ++j) {
              std::copy_n(ev.data() + static_cast<std::size_t>(negs[j]) * d, d,
                          neg_rows.data() + j * d);
            }
            kernels::parallel::gemm(Trans::kNo, Trans::kNo, GemmShape{rpg, d, nn},
                                    dlogits.data(), neg_rows.data(),
                                    dh.data() + grp * rpg * d, true);
          }
          if (need_e) {
            dneg.resize(nn * d);
            kernels::parallel::gemm(Trans::kYes, Trans::kNo, GemmShape{nn, d, rpg},
                                    dlogits.data(), hv.data() + grp * rpg * d,
                                    dneg.data(), false);
            for (std::size_t j = 0; j < nn; ++j) {
              Real* dst = de.data() + static_cast<std::size_t>(negs[j]) * d;
              const Real* src = dneg.data() + j * d;
              for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
            }
          }
        }
      });
}

template <typename Real>
Tensor<Real> binary_cross_entropy(const Tensor<Real>& probs,
                                  std::span<const float> labels) {
  auto& g = probs.graph();
  if (probs.size() != labels.size()) {
    throw ShapeError("binary_cross_entropy: " + std::to_string(probs.size()) +
                     " probabilities for " + std::to_string(labels.size()) + " labels");
  }
  constexpr Real kClamp = Real(1e-7);
  auto pv = probs.value();
  double total = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const Real p = std::clamp(pv[i], kClamp, Real(1) - kClamp);
    const Real y = static_cast<Real>(labels[i]);
    total -= static_cast<double>(y * std::log(p) + (Real(1) - y) * std::log(Real(1) - p));
  }
  const std::size_t ip = probs.id();
  std::vector<float> ys(labels.begin(), labels.end());
  return g.record(OpKind::kBinaryCrossEntropy, {1}, {static_cast<Real>(total)}, {ip},
                  [ip, ys = std::move(ys)](Graph<Real>& g, std::size_t self) {
                    if (!g.requires_grad(ip)) return;
                    const Real up = g.grad(self)[0];
                    auto pv = g.value(ip);
                    auto dp = g.grad(ip);
                    for (std::size_t i = 0; i < pv.size(); ++i) {
                      const Real p = pv[i];
                      if (p < kClamp || p > Real(1) - kClamp) continue;
                      const Real y = static_cast<Real>(ys[i]);
                      dp[i] += up * (-y / p + (Real(1) - y) / (Real(1) - p));
                    }
                  });
}

#define GPSD_INSTANTIATE_OPS(Real)                                                \
  template Tensor<Real> matmul(const Tensor<Real>&, const Tensor<Real>&);         \
  template Tensor<Real> matmul_nt(const Tensor<Real>&, const Tensor<Real>&);      \
  template Tensor<Real> add(const Tensor<Real>&, const Tensor<Real>&);            \
  template Tensor<Real> add_row(const Tensor<Real>&, const Tensor<Real>&);        \
  template Tensor<Real> mul(const Tensor<Real>&, const Tensor<Real>&);            \
  template Tensor<Real> scale(const Tensor<Real>&, Real);                         \
  template Tensor<Real> sigmoid(const Tensor<Real>&);                             \
  template Tensor<Real> silu(const Tensor<Real>&);                                \
  template Tensor<Real> exp(const Tensor<Real>&);                                 \
  template Tensor<Real> log(const Tensor<Real>&);                                 \
  template Tensor<Real> softmax(const Tensor<Real>&);                             \
  template Tensor<Real> sum(const Tensor<Real>&);                                 \
  template Tensor<Real> mean(const Tensor<Real>&);                                \
  template Tensor<Real> reshape(const Tensor<Real>&, Shape);                      \
  template Tensor<Real> transpose(const Tensor<Real>&);                           \
  template Tensor<Real> concat(std::span<const Tensor<Real>>, std::size_t);       \
  template Tensor<Real> gather(const Tensor<Real>&, std::span<const std::int32_t>); \
  template Tensor<Real> rms_norm(const Tensor<Real>&, const Tensor<Real>&, Real); \
  template Tensor<Real> rope(const Tensor<Real>&, std::span<const std::int32_t>,  \
                             std::size_t, double);                                \
  template Tensor<Real> attention(const Tensor<Real>&, const Tensor<Real>&,       \
                                  const Tensor<Real>&, const AttentionLayout&);   \
  template Tensor<Real> sampled_softmax_loss(const Tensor<Real>&,                 \
                                             const Tensor<Real>&,                 \
                                             const SampledSoftmaxTargets&);       \
  template Tensor<Real> binary_cross_entropy(const Tensor<Real>&,                 \
                                             std::span<const float>);

GPSD_INSTANTIATE_OPS(float)
GPSD_INSTANTIATE_OPS(double)

#undef GPSD_INSTANTIATE_OPS

}  // namespace gpsd
