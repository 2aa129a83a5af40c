#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mixuplr/error.hpp"

namespace mixuplr {

enum class OptimizerKind { adam, sgd };

inline OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd") return OptimizerKind::sgd;
  throw DomainError("unknown optimizer: " + std::string(name));
}

struct OptimizerHyper {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;
};

/// One update of params in place. Adam uses bias-corrected moments, so the
/// first step moves each coordinate by about lr * sign(g).
inline void sgd_adam_step(std::span<double> params, std::span<const double> grads, OptimizerState& state,
                          const OptimizerHyper& hyper) {
  if (params.size() != grads.size()) throw ShapeError("optimizer: params/grads length mismatch");
  if (hyper.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= hyper.lr * grads[i];
    ++state.step;
    return;
  }
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) throw ShapeError("optimizer: state length mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
  }
}

}  // namespace mixuplr
