#pragma once

#include "hnndecon/tape.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>

namespace hnndecon {

enum class Method { Euler, RK4, AveragedVelocitySO };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Euler: return "Euler";
    case Method::RK4: return "RK4";
    case Method::AveragedVelocitySO: return "AveragedVelocitySO";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "Euler") return Method::Euler;
  if (s == "RK4") return Method::RK4;
  if (s == "AveragedVelocitySO") return Method::AveragedVelocitySO;
  throw std::invalid_argument("unknown integrator method '" + s + "'");
}

/// Fixed-step integration settings. `dt` is the output interval; each interval is
/// advanced with `substeps` steps of size dt / substeps.
struct IntegratorConfig {
  Method method = Method::RK4;
  double dt = 0.1;
  int substeps = 1;

  double step() const { return dt / substeps; }

  void validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("integrator dt must be positive");
    if (substeps < 1) throw std::invalid_argument("integrator substeps must be at least 1");
  }
};

/// Integration of ground-truth data: RK4 with 16 substeps per output interval.
inline IntegratorConfig ground_truth_integrator(double dt) { return {Method::RK4, dt, 16}; }

/// A rollout left the finite region; carries the index of the last finite state.
class DivergedRollout : public std::runtime_error {
 public:
  DivergedRollout(std::size_t last_finite_index, const std::string& what)
      : std::runtime_error(what), last_finite(last_finite_index) {}
  std::size_t last_finite;
};

/// States whose largest coordinate exceeds this magnitude count as diverged.
inline constexpr double kDivergenceNorm = 1e6;

// ---- state algebra -------------------------------------------------------
// A state is an Eigen vector, a batch of row states [b, D] as a Tensor, or a
// recorded Var of the same shape. The step rules below only need +, scalar *,
// a split into (position, velocity) halves, and a divergence probe.

inline double max_abs(const Eigen::VectorXd& z) {
  return z.allFinite() ? z.cwiseAbs().maxCoeff() : INFINITY;
}
inline double max_abs(const Tensor& z) {
  double m = 0.0;
  for (double v : z.data()) {
    if (!std::isfinite(v)) return INFINITY;
    m = std::max(m, std::abs(v));
  }
  return m;
}
inline double max_abs(const Var& z) { return max_abs(z.value()); }

inline Eigen::VectorXd first_half(const Eigen::VectorXd& z) { return z.head(z.size() / 2); }
inline Eigen::VectorXd second_half(const Eigen::VectorXd& z) { return z.tail(z.size() / 2); }
inline Eigen::VectorXd join_halves(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::VectorXd z(a.size() + b.size());
  z << a, b;
  return z;
}

inline Tensor first_half(const Tensor& z) { return gather_cols(z, column_range(0, z.cols() / 2)); }
inline Tensor second_half(const Tensor& z) { return gather_cols(z, column_range(z.cols() / 2, z.cols())); }
inline Tensor join_halves(const Tensor& a, const Tensor& b) {
  const std::size_t w = a.cols() + b.cols();
  return scatter_cols(a, column_range(0, a.cols()), w) + scatter_cols(b, column_range(a.cols(), w), w);
}

inline Var first_half(const Var& z) { return gather_cols(z, column_range(0, z.value().cols() / 2)); }
inline Var second_half(const Var& z) {
  return gather_cols(z, column_range(z.value().cols() / 2, z.value().cols()));
}
inline Var join_halves(const Var& a, const Var& b) {
  const std::size_t na = a.value().cols(), w = na + b.value().cols();
  return add(scatter_cols(a, column_range(0, na), w), scatter_cols(b, column_range(na, w), w));
}

// ---- step rules ----------------------------------------------------------

/// Second-order step with averaged velocity:
///   a = A(q, v, u);  v' = v + h a;  q' = q + h (v/2 + v'/2)  (= q + h v + ½ h² a).
template <class V, class Accel, class Control>
std::pair<V, V> averaged_velocity_step(Accel&& accel, const V& q, const V& v, const Control& u, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("step size must be positive");
  const V a = accel(q, v, u);
  const V v_next = v + h * a;
  const V q_next = q + h * (0.5 * v + 0.5 * v_next);
  return {q_next, v_next};
}

template <class State, class Field>
State integrator_step(Field& f, const State& z, double h, Method method) {
  switch (method) {
    case Method::Euler:
      return State(z + h * f(z));
    case Method::RK4: {
      const State k1 = f(z);
      const State k2 = f(State(z + (0.5 * h) * k1));
      const State k3 = f(State(z + (0.5 * h) * k2));
      const State k4 = f(State(z + h * k3));
      return State(z + (h / 6.0) * State(State(k1 + 2.0 * k2) + State(2.0 * k3 + k4)));
    }
    case Method::AveragedVelocitySO: {
      // Upper half of z is position, lower half velocity; the field's lower half is the acceleration.
      auto accel = [&f](const State& q, const State& v, int) { return State(second_half(f(join_halves(q, v)))); };
      const auto [q, v] = averaged_velocity_step(accel, State(first_half(z)), State(second_half(z)), 0, h);
      return State(join_halves(q, v));
    }
  }
  throw std::invalid_argument("unknown integrator method");
}

/// Advances z over one output interval of length `interval` with cfg.substeps steps.
template <class State, class Field>
State advance(Field& f, State z, double interval, const IntegratorConfig& cfg) {
  const double h = interval / cfg.substeps;
  for (int s = 0; s < cfg.substeps; ++s) z = integrator_step(f, z, h, cfg.method);
  return z;
}

template <class State>
struct Rollout {
  std::vector<State> states;  // states[k] at times[k]; shorter than times when diverged
  bool diverged = false;
};

inline void check_times(std::span<const double> times) {
  if (times.empty() || times[0] != 0.0) throw std::invalid_argument("output times must start at 0");
  for (std::size_t k = 1; k < times.size(); ++k)
    if (!(times[k] > times[k - 1])) throw std::invalid_argument("output times must be strictly increasing");
}

/// Integrates dz/dt = f(z) from z0 and reports the finite prefix if the rollout diverges.
template <class State, class Field>
Rollout<State> ode_solve_partial(Field&& f, const State& z0, std::span<const double> times,
                                 const IntegratorConfig& cfg) {
  cfg.validate();
  check_times(times);
  Rollout<State> out;
  out.states.reserve(times.size());
  out.states.push_back(z0);
  for (std::size_t k = 1; k < times.size(); ++k) {
    State next = advance(f, out.states.back(), times[k] - times[k - 1], cfg);
    if (!(max_abs(next) <= kDivergenceNorm)) {
      out.diverged = true;
      break;
    }
    out.states.push_back(std::move(next));
  }
  return out;
}

/// Integrates dz/dt = f(z); trajectory[0] = z0. Throws DivergedRollout on NaN or blow-up.
template <class State, class Field>
std::vector<State> ode_solve(Field&& f, const State& z0, std::span<const double> times,
                             const IntegratorConfig& cfg) {
  Rollout<State> r = ode_solve_partial(std::forward<Field>(f), z0, times, cfg);
  if (r.diverged) {
    throw DivergedRollout(r.states.size() - 1,
                          "rollout diverged after state " + std::to_string(r.states.size() - 1));
  }
  return std::move(r.states);
}

/// Uniform grid 0, dt, ..., (count − 1) dt.
inline std::vector<double> time_grid(std::size_t count, double dt) {
  std::vector<double> t(count);
  for (std::size_t k = 0; k < count; ++k) t[k] = static_cast<double>(k) * dt;
  return t;
}

}  // namespace hnndecon
