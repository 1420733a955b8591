// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include "gpsd/optim.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace gpsd {

Schedule::Schedule(double peak_lr, std::size_t warmup_steps,
                   std::size_t total_steps, double floor_fraction)
    : peak_(peak_lr),
      warmup_(warmup_steps),
      total_(total_steps),
      floor_fraction_(floor_fraction) {
  if (!(peak_lr > 0)) throw std::invalid_argument("peak learning rate must be > 0");
  if (warmup_steps == 0 || warmup_steps >= total_steps) {
    throw std::invalid_argument("schedule requires 0 < warmup < total steps");
  }
  if (!(floor_fraction > 0 && floor_fraction < 1)) {
    throw std::invalid_argument("floor fraction must be in (0,1)");
  }
}

double Schedule::lr_at(std::size_t step) const {
  if (step > total_) {
    throw std::out_of_range("step " + std::to_string(step) + " beyond total " +
                            std::to_string(total_));
  }
  if (step <= warmup_) {
    return peak_ * (static_cast<double>(step) / static_cast<double>(warmup_));
  }
  const double t = static_cast<double>(step - warmup_) /
                   static_cast<double>(total_ - warmup_);
  const double floor = floor_fraction_ * peak_;
  return floor + (peak_ - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename Real>
double clip_global_norm(ParameterStore<Real>& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params.params()) {
    if (params.is_frozen(p.name)) continue;
    for (Real g : p.grad) {
      if (!std::isfinite(g)) {
        std::ostringstream os;
        os << "non-finite gradient in parameter " << p.name;
        throw NumericError(os.str());
      }
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const Real factor = static_cast<Real>(max_norm / norm);
    for (auto& p : params.params()) {
      if (params.is_frozen(p.name)) continue;
      for (auto& g : p.grad) g *= factor;
    }
  }
  return norm;
}

template <typename Real>
void AdamW<Real>::step(ParameterStore<Real>& params, double lr) {
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (auto& p : params.params()) {
    if (params.is_frozen(p.name)) continue;
    if (p.grad.size() != p.value.size()) {
      throw ShapeError("gradient shape mismatch for " + p.name);
    }
    auto& st = state_[p.name];
    if (st.first.empty()) {
      st.first.assign(p.size(), Real(0));
      st.second.assign(p.size(), Real(0));
    }
    const Real rb1 = static_cast<Real>(b1), rb2 = static_cast<Real>(b2);
    const Real inv_c1 = static_cast<Real>(1.0 / c1);
    const Real inv_c2 = static_cast<Real>(1.0 / c2);
    const Real eps = static_cast<Real>(config_.eps);
    const Real rlr = static_cast<Real>(lr);
    const Real wd = p.decay ? static_cast<Real>(config_.weight_decay) : Real(0);
    Real* theta = p.value.data();
    const Real* grad = p.grad.data();
    Real* m = st.first.data();
    Real* v = st.second.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const Real g = grad[i];
      m[i] = rb1 * m[i] + (Real(1) - rb1) * g;
      v[i] = rb2 * v[i] + (Real(1) - rb2) * g * g;
      const Real mhat = m[i] * inv_c1;
      const Real vhat = v[i] * inv_c2;
      theta[i] -= rlr * (mhat / (std::sqrt(vhat) + eps) + wd * theta[i]);
    }
  }
}

template double clip_global_norm<float>(ParameterStore<float>&, double);
template double clip_global_norm<double>(ParameterStore<double>&, double);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace gpsd
