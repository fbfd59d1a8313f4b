#pragma once

#include "hnndecon/mlp.hpp"

#include <cmath>
#include <cstdint>

namespace hnndecon {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled
};

struct AdamState {
  AdamConfig config;
  ParamStore first_moment;
  ParamStore second_moment;
  std::int64_t step = 0;

  AdamState() = default;
  AdamState(AdamConfig cfg, const ParamStore& params) : config(cfg) {
    for (const auto& [name, value] : params) {
      first_moment.emplace(name, Tensor(value.shape()));
      second_moment.emplace(name, Tensor(value.shape()));
    }
  }
};

/// One Adam update with decoupled weight decay at learning rate `lr`.
inline void adam_step(AdamState& state, ParamStore& params, const ParamStore& grads, double lr) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment stores differ in size");
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (auto& [name, theta] : params) {
    const Tensor& g = lookup(grads, name);
    Tensor& m = state.first_moment.at(name);
    Tensor& v = state.second_moment.at(name);
    if (g.shape() != theta.shape() || m.shape() != theta.shape()) {
      throw ShapeError("adam_step: shape mismatch for '" + name + "'");
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] -= lr * (m_hat / (std::sqrt(v_hat) + c.eps) + c.weight_decay * theta[i]);
    }
  }
}

inline void adam_step(AdamState& state, ParamStore& params, const ParamStore& grads) {
  adam_step(state, params, grads, state.config.lr);
}

}  // namespace hnndecon
