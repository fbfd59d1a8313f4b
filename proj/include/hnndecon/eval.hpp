#pragma once

#include "hnndecon/train.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>

namespace hnndecon {

/// Every logarithm in the metrics sees at least this value.
inline constexpr double kMetricFloor = 1e-8;
/// Error assigned to the time steps of a test rollout after it diverged.
inline constexpr double kErrorCeiling = 1e2;

enum class Normalization { Product, Sum };

inline std::string to_string(Normalization n) { return n == Normalization::Product ? "product" : "sum"; }

inline Normalization normalization_from_string(const std::string& s) {
  if (s == "product") return Normalization::Product;
  if (s == "sum") return Normalization::Sum;
  throw ConfigError("unknown normalization '" + s + "'");
}

class InsufficientData : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline double normalized(double diff, double a, double b, Normalization n) {
  const double denom = n == Normalization::Product ? a * b : a + b;
  if (diff == 0.0) return kMetricFloor;
  if (denom == 0.0) return kErrorCeiling;
  return std::clamp(diff / denom, kMetricFloor, kErrorCeiling);
}

}  // namespace detail

/// ‖ẑ − z‖ / (‖ẑ‖·‖z‖) (or / (‖ẑ‖ + ‖z‖)), floored at kMetricFloor.
inline double relative_state_error(const StateVector& pred, const StateVector& truth,
                                   Normalization n = Normalization::Product) {
  if (pred.size() != truth.size()) throw ShapeError("relative_state_error: dimensions differ");
  return detail::normalized((pred - truth).norm(), pred.norm(), truth.norm(), n);
}

/// Same convention for scalars (energies).
inline double relative_scalar_error(double pred, double truth, Normalization n = Normalization::Product) {
  return detail::normalized(std::abs(pred - truth), std::abs(pred), std::abs(truth), n);
}

/// exp of the trapezoid-weighted mean of log f over a uniform grid.
inline double geometric_mean_error(std::span<const double> series) {
  if (series.empty()) throw std::invalid_argument("geometric mean of an empty series");
  if (series.size() == 1) return std::max(series[0], kMetricFloor);
  double acc = 0.0, weight = 0.0;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const double w = (k == 0 || k + 1 == series.size()) ? 0.5 : 1.0;
    acc += w * std::log(std::max(series[k], kMetricFloor));
    weight += w;
  }
  return std::max(std::exp(acc / weight), kMetricFloor);
}

/// Plain geometric mean (equal weights), floored.
inline double geometric_mean(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("geometric mean of nothing");
  double acc = 0.0;
  for (double v : values) acc += std::log(std::max(v, kMetricFloor));
  return std::max(std::exp(acc / static_cast<double>(values.size())), kMetricFloor);
}

/// Relative error between H(ẑ_t) and H(z_0) along a predicted canonical trajectory.
inline std::vector<double> energy_violation(const SystemSpec& system, std::span<const StateVector> predicted,
                                            Normalization n = Normalization::Product) {
  if (!system.conservative()) throw ContractError("energy violation needs a conservative system, " + system.name() + " has drag");
  if (predicted.empty()) return {};
  const double h0 = true_hamiltonian(system, predicted.front());
  std::vector<double> out;
  out.reserve(predicted.size());
  for (const auto& z : predicted) out.push_back(relative_scalar_error(true_hamiltonian(system, z), h0, n));
  return out;
}

/// Same, with H(z_0) taken from the true initial state.
inline std::vector<double> energy_violation(const SystemSpec& system, const StateVector& z0,
                                            std::span<const StateVector> predicted, Normalization n) {
  if (!system.conservative()) throw ContractError("energy violation needs a conservative system, " + system.name() + " has drag");
  const double h0 = true_hamiltonian(system, z0);
  std::vector<double> out;
  out.reserve(predicted.size());
  for (const auto& z : predicted) out.push_back(relative_scalar_error(true_hamiltonian(system, z), h0, n));
  return out;
}

// ---- learned fields in canonical coordinates -----------------------------

/// F̂ expressed as d[q, p]/dt. For NODE_SO, with v = M(q)⁻¹p and a = A(q, v):
/// dq/dt = v, dp/dt = M(q) a + Ṁ(q, v) v (M from the true system).
inline Tensor canonical_model_field(const SystemSpec& system, const ModelSpec& spec, const ParamStore& params,
                                    const Tensor& z) {
  if (!spec.velocity_coordinates()) return model_field(spec, params, z);
  const Tensor zv = to_model_coordinates(system, spec, z);
  const Tensor f = model_field(spec, params, zv);
  const auto n = static_cast<Eigen::Index>(system.dof());
  Tensor out(z.shape());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const StateVector s = row_state(zv, r), fs = row_state(f, r);
    const Eigen::VectorXd q = s.head(n), v = s.tail(n), a = fs.tail(n);
    StateVector g(2 * n);
    g.head(n) = fs.head(n);
    g.tail(n) = mass_matrix(system, q) * a + mass_matrix_rate(system, q, v) * v;
    set_row(out, r, g);
  }
  return out;
}

/// Ground truth seen by the bound check: energy, its gradient and the true field.
struct EnergyOracle {
  std::function<double(const StateVector&)> energy;
  std::function<StateVector(const StateVector&)> gradient;
  std::function<StateVector(const StateVector&)> dynamics;
};

inline EnergyOracle oracle_for(const SystemSpec& system) {
  return {[system](const StateVector& z) { return true_hamiltonian(system, z); },
          [system](const StateVector& z) { return hamiltonian_gradient(system, z); },
          [system](const StateVector& z) { return true_dynamics(system, z); }};
}

/// δ̂ = max over the given canonical states of ‖F̂(z) − F(z)‖.
template <class Field>
double estimate_dynamics_error(Field&& model_canonical, const EnergyOracle& truth, const Tensor& states) {
  if (states.size() == 0) return 0.0;
  const Tensor flat = states.reshaped(Shape{states.size() / states.cols(), states.cols()});
  const Tensor f = model_canonical(flat);
  double worst = 0.0;
  for (std::size_t r = 0; r < flat.rows(); ++r)
    worst = std::max(worst, (row_state(f, r) - truth.dynamics(row_state(flat, r))).norm());
  return worst;
}

template <class Field>
double estimate_dynamics_error(Field&& model_canonical, const SystemSpec& system, const Tensor& states) {
  return estimate_dynamics_error(std::forward<Field>(model_canonical), oracle_for(system), states);
}

// ---- test rollouts ------------------------------------------------------

struct TestRollouts {
  Tensor predicted;                    // [M, T, D] canonical; rows past divergence are zero
  std::vector<std::size_t> valid_len;  // number of finite states per trajectory
};

/// Integrates a batched canonical-or-model field from every test initial state. `field`
/// works in model coordinates; results are converted back to canonical coordinates.
template <class Field>
TestRollouts rollout_test_set(Field&& field, const SystemSpec& system, const ModelSpec& spec, const Tensor& test,
                              const IntegratorConfig& integ) {
  integ.validate();
  const std::size_t m = test.dim(0), len = test.dim(1), d = test.dim(2);
  Tensor z = to_model_coordinates(system, spec, time_slice(test, all_rows(m), 0));
  TestRollouts out{Tensor(Shape{m, len, d}), std::vector<std::size_t>(m, len)};
  std::vector<char> alive(m, 1);
  for (std::size_t t = 0; t < len; ++t) {
    if (t > 0) z = advance(field, z, integ.dt, integ);
    for (std::size_t r = 0; r < m; ++r) {
      if (alive[r]) {
        bool finite = true;
        for (std::size_t j = 0; j < d; ++j) finite = finite && std::abs(z.at(r, j)) <= kDivergenceNorm;
        if (finite) {
          for (std::size_t j = 0; j < d; ++j) out.predicted[(r * len + t) * d + j] = z.at(r, j);
        } else {
          alive[r] = 0;
          out.valid_len[r] = t;
        }
      }
      // Dead rows are parked at zero so they stay finite.
      if (!alive[r])
        for (std::size_t j = 0; j < d; ++j) z.at(r, j) = 0.0;
    }
  }
  out.predicted = from_model_coordinates(system, spec, out.predicted);
  return out;
}

inline std::vector<StateVector> trajectory_states(const Tensor& trajs, std::size_t index, std::size_t count) {
  std::vector<StateVector> out;
  const std::size_t len = trajs.dim(1), d = trajs.dim(2);
  out.reserve(count);
  for (std::size_t t = 0; t < count && t < len; ++t) {
    StateVector z(static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < d; ++j) z(static_cast<Eigen::Index>(j)) = trajs[(index * len + t) * d + j];
    out.push_back(std::move(z));
  }
  return out;
}

// ---- energy bound --------------------------------------------------------

struct BoundCheckReport {
  std::vector<double> times;
  std::vector<double> max_energy_error;  // max over trajectories of |H(ẑ_t) − H(z_0)|
  std::vector<double> bound;             // slack · t · δ̂ · sup‖∇H‖
  double delta_hat = 0.0;
  double sup_grad = 0.0;
  double slack = 1.5;
  double abs_tolerance = 0.0;
  double tightest_ratio = 0.0;  // max_t max_energy_error / (t δ̂ sup‖∇H‖)
  bool violated = false;
};

/// Checks |H(ẑ_t) − H(z_0)| ≤ slack · t · δ̂ · sup‖∇H‖ (+ abs_tolerance for solver noise),
/// with δ̂ and sup‖∇H‖ taken over every state visited by the predicted and true rollouts.
template <class Field>
BoundCheckReport check_linear_energy_bound(Field&& model_canonical, const EnergyOracle& oracle, const Tensor& truth,
                                           const TestRollouts& pred, double dt, double slack = 1.5,
                                           double abs_tolerance = 1e-6) {
  const std::size_t m = truth.dim(0), len = truth.dim(1), d = truth.dim(2);
  std::vector<double> visited;
  for (std::size_t r = 0; r < m; ++r) {
    const auto t_src = truth.data().subspan(r * len * d, len * d);
    visited.insert(visited.end(), t_src.begin(), t_src.end());
    const auto p_src = pred.predicted.data().subspan(r * len * d, pred.valid_len[r] * d);
    visited.insert(visited.end(), p_src.begin(), p_src.end());
  }
  const std::size_t rows = visited.size() / d;
  const Tensor states(Shape{rows, d}, std::move(visited));

  BoundCheckReport rep;
  rep.slack = slack;
  rep.abs_tolerance = abs_tolerance;
  rep.delta_hat = estimate_dynamics_error(model_canonical, oracle, states);
  for (std::size_t r = 0; r < states.rows(); ++r)
    rep.sup_grad = std::max(rep.sup_grad, oracle.gradient(row_state(states, r)).norm());

  rep.times = time_grid(len, dt);
  rep.max_energy_error.assign(len, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    const auto traj = trajectory_states(pred.predicted, r, pred.valid_len[r]);
    const double h0 = oracle.energy(trajectory_states(truth, r, 1).front());
    for (std::size_t t = 0; t < traj.size(); ++t)
      rep.max_energy_error[t] = std::max(rep.max_energy_error[t], std::abs(oracle.energy(traj[t]) - h0));
  }
  for (std::size_t t = 0; t < len; ++t) {
    const double slope = rep.times[t] * rep.delta_hat * rep.sup_grad;
    rep.bound.push_back(slack * slope);
    if (rep.max_energy_error[t] > slack * slope + abs_tolerance) rep.violated = true;
    if (slope > 0.0) rep.tightest_ratio = std::max(rep.tightest_ratio, rep.max_energy_error[t] / slope);
  }
  return rep;
}

template <class Field>
BoundCheckReport check_linear_energy_bound(Field&& model_canonical, const SystemSpec& system, const Tensor& truth,
                                           const TestRollouts& pred, double dt, double slack = 1.5,
                                           double abs_tolerance = 1e-6) {
  if (!system.conservative()) throw ContractError("energy bound check needs a conservative system, " + system.name() + " has drag");
  return check_linear_energy_bound(std::forward<Field>(model_canonical), oracle_for(system), truth, pred, dt, slack,
                                   abs_tolerance);
}

/// Fraction of variance of y explained by the least-squares line a + b x.
inline double linear_fit_r2(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 3) throw InsufficientData("linear fit needs at least 3 paired points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (syy == 0.0) return 1.0;
  if (sxx == 0.0) return 0.0;
  return sxy * sxy / (sxx * syy);
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const double r2 = linear_fit_r2(x, y);
  double mx = 0, my = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  for (std::size_t i = 0; i < x.size(); ++i) sxy += (x[i] - mx) * (y[i] - my);
  return std::copysign(std::sqrt(r2), sxy);
}

// ---- records -------------------------------------------------------------

struct MetricsRecord {
  std::string run_id;
  std::string system;
  std::string family;
  std::string loss = "L2";
  std::uint64_t seed = 0;
  double beta = 0.0;

  std::vector<std::vector<double>> rel_err;      // [trajectory][t]
  std::vector<std::vector<double>> energy_viol;  // [trajectory][t]; empty for damped systems
  std::vector<double> traj_error;                // per-trajectory geometric mean over time
  std::vector<double> traj_energy;

  double rollout_error = 0.0;  // geometric mean over trajectories of traj_error
  double energy_error = std::numeric_limits<double>::quiet_NaN();
  double symplectic_error = std::numeric_limits<double>::quiet_NaN();
  double delta_hat = std::numeric_limits<double>::quiet_NaN();
  double bound_ratio = std::numeric_limits<double>::quiet_NaN();
  bool bound_violated = false;
  double energy_growth_r2 = std::numeric_limits<double>::quiet_NaN();
  std::size_t diverged = 0;
};

/// Pearson correlation of log energy violation against log rollout error across records.
inline double correlate_energy_vs_rollout(std::span<const MetricsRecord> records) {
  std::vector<double> x, y;
  for (const auto& r : records) {
    if (!std::isfinite(r.energy_error)) continue;
    x.push_back(std::log(std::max(r.rollout_error, kMetricFloor)));
    y.push_back(std::log(std::max(r.energy_error, kMetricFloor)));
  }
  if (x.size() < 3) throw InsufficientData("energy/rollout correlation needs at least 3 records with energy data");
  return pearson(x, y);
}

/// Mean symplectic error of a learned model over a fixed sample of (model-coordinate) states.
inline double symplectic_error_summary(const ModelSpec& spec, const ParamStore& params, const Tensor& states,
                                       std::size_t sample = 256, std::uint64_t seed = 0) {
  const Tensor flat = states.reshaped(Shape{states.size() / states.cols(), states.cols()});
  std::vector<std::size_t> rows = all_rows(flat.rows());
  std::mt19937_64 rng(seed);
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(std::min(sample, rows.size()));
  std::sort(rows.begin(), rows.end());
  const Tensor picked = time_slice(flat.reshaped(Shape{flat.rows(), 1, flat.cols()}), rows, 0);
  const auto errors = symplectic_errors(spec, params, picked);
  double acc = 0.0;
  for (double e : errors) acc += e;
  return acc / static_cast<double>(errors.size());
}

struct EvalOptions {
  Normalization normalization = Normalization::Product;
  IntegratorConfig integrator{Method::RK4, 0.1, 1};
  std::size_t symplectic_sample = 256;
  double bound_slack = 1.5;
  double bound_abs_tolerance = 1e-6;
};

struct RunEvaluation {
  MetricsRecord record;
  std::optional<BoundCheckReport> bound;
  TestRollouts rollouts;
  std::vector<double> mean_energy_error;  // mean over trajectories of |H(ẑ_t) − H(z_0)|
};

/// Evaluation of an arbitrary field: `field` acts in the model coordinates of `spec`,
/// `canonical` is the same dynamics as d[q, p]/dt. The symplectic error is left unset.
template <class Field, class Canonical>
RunEvaluation evaluate_field(Field&& field, Canonical&& canonical, const ModelSpec& spec, const Dataset& data,
                             const EvalOptions& opt, MetricsRecord meta = {}) {
  const SystemSpec& sys = data.system;
  const Tensor& truth = data.test;
  const std::size_t m = truth.dim(0), len = truth.dim(1);
  IntegratorConfig integ = opt.integrator;
  integ.dt = data.config.dt;

  RunEvaluation ev{std::move(meta), std::nullopt, rollout_test_set(field, sys, spec, truth, integ), {}};
  MetricsRecord& rec = ev.record;
  rec.system = sys.name();
  rec.family = to_string(spec.family);
  rec.rel_err.assign(m, std::vector<double>(len, kErrorCeiling));
  ev.mean_energy_error.assign(len, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t valid = ev.rollouts.valid_len[r];
    if (valid < len) ++rec.diverged;
    const auto pred = trajectory_states(ev.rollouts.predicted, r, valid);
    const auto real = trajectory_states(truth, r, len);
    for (std::size_t t = 0; t < valid; ++t) rec.rel_err[r][t] = relative_state_error(pred[t], real[t], opt.normalization);
    rec.traj_error.push_back(geometric_mean_error(rec.rel_err[r]));
    if (sys.conservative()) {
      std::vector<double> viol(len, kErrorCeiling);
      const auto partial = energy_violation(sys, real.front(), pred, opt.normalization);
      std::copy(partial.begin(), partial.end(), viol.begin());
      rec.traj_energy.push_back(geometric_mean_error(viol));
      rec.energy_viol.push_back(std::move(viol));
      const double h0 = true_hamiltonian(sys, real.front());
      for (std::size_t t = 0; t < len; ++t) {
        const double e = t < valid ? std::abs(true_hamiltonian(sys, pred[t]) - h0) : kErrorCeiling;
        ev.mean_energy_error[t] += e / static_cast<double>(m);
      }
    }
  }
  rec.rollout_error = geometric_mean(rec.traj_error);
  if (sys.conservative()) {
    rec.energy_error = geometric_mean(rec.traj_energy);
    ev.bound = check_linear_energy_bound(canonical, sys, truth, ev.rollouts, data.config.dt, opt.bound_slack,
                                         opt.bound_abs_tolerance);
    rec.delta_hat = ev.bound->delta_hat;
    rec.bound_ratio = ev.bound->tightest_ratio;
    rec.bound_violated = ev.bound->violated;
    rec.energy_growth_r2 = linear_fit_r2(time_grid(len, data.config.dt), ev.mean_energy_error);
  } else {
    rec.delta_hat = estimate_dynamics_error(canonical, sys, truth);
  }
  return ev;
}

/// Full evaluation of a trained model on the dataset's test trajectories.
inline RunEvaluation evaluate_model(const ModelSpec& spec, const ParamStore& params, const Dataset& data,
                                    const EvalOptions& opt, MetricsRecord meta = {}) {
  auto field = [&](const Tensor& z) { return model_field(spec, params, z); };
  auto canonical = [&](const Tensor& z) { return canonical_model_field(data.system, spec, params, z); };
  RunEvaluation ev = evaluate_field(field, canonical, spec, data, opt, std::move(meta));
  ev.record.symplectic_error =
      symplectic_error_summary(spec, params, to_model_coordinates(data.system, spec, data.test), opt.symplectic_sample);
  return ev;
}

}  // namespace hnndecon
