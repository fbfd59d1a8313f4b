#pragma once

#include "hnndecon/adam.hpp"
#include "hnndecon/models.hpp"
#include "hnndecon/systems.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <numbers>
#include <numeric>

namespace hnndecon {

/// Rejected configuration (bad values or an unsupported combination).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Training gave non-finite losses for too many consecutive epochs.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LossKind { L2, L1 };

inline std::string to_string(LossKind k) { return k == LossKind::L2 ? "L2" : "L1"; }

inline LossKind loss_kind_from_string(const std::string& s) {
  if (s == "L2") return LossKind::L2;
  if (s == "L1") return LossKind::L1;
  throw ConfigError("unknown loss '" + s + "'");
}

/// Rollout losses above this value (or non-finite) are clamped and skip the update.
inline constexpr double kLossCeiling = 1e6;

struct TrainConfig {
  std::size_t epochs = 256;
  std::size_t batch_size = 200;
  double dt = 0.1;
  LossKind loss = LossKind::L2;
  double beta = 0.0;  // symplectic regularizer weight, NODE only
  double lr_max = 2e-4;
  double lr_min = 1e-6;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 64;
  std::size_t max_nan_epochs = 3;

  void validate(Family family) const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(dt > 0.0)) throw ConfigError("train dt must be positive");
    if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
    if (beta > 0.0 && family != Family::NODE)
      throw ConfigError("the symplectic regularizer only applies to NODE, not " + to_string(family));
    if (!(lr_max > 0.0) || !(lr_min >= 0.0) || lr_min > lr_max) throw ConfigError("need 0 <= lr_min <= lr_max, lr_max > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  }
};

/// η_min + ½(η_max − η_min)(1 + cos(π step / total)).
inline double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min) {
  if (step > total_steps) throw std::invalid_argument("step past the end of the schedule");
  if (total_steps == 0) return lr_max;
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

// ---- datasets ------------------------------------------------------------

struct DataConfig {
  std::size_t n_train_chunks = 1000;
  std::size_t n_test = 100;
  std::size_t chunk_len = 5;  // states per training chunk
  std::size_t test_factor = 20;
  double dt = 0.1;
  std::uint64_t seed = 0;
  std::optional<double> state_noise;  // overrides the family default

  std::size_t test_len() const { return test_factor * chunk_len; }

  void validate() const {
    if (n_train_chunks == 0 || n_test == 0) throw ConfigError("dataset sizes must be positive");
    if (chunk_len < 2) throw ConfigError("chunk_len must be at least 2 states");
    if (test_factor == 0) throw ConfigError("test_factor must be positive");
    if (!(dt > 0.0)) throw ConfigError("data dt must be positive");
  }
};

/// Trajectories in canonical coordinates, stored [trajectory, time, coordinate].
struct Dataset {
  SystemSpec system;
  DataConfig config;
  Tensor train;
  Tensor test;

  std::size_t state_dim() const { return system.state_dim(); }
};

/// Seed of trajectory `index` in stream `stream` (0 train, 1 test), independent of the other counts.
inline std::uint64_t trajectory_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::uint64_t x = seed ^ (0x9E3779B97F4A7C15ULL * (2 * index + stream + 1));
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;  // splitmix64 finalizer
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline Tensor simulate(const SystemSpec& spec, const StateVector& z0, std::size_t length, double dt) {
  auto field = [&](const StateVector& z) { return true_dynamics(spec, z); };
  const auto traj = ode_solve(field, z0, time_grid(length, dt), ground_truth_integrator(dt));
  Tensor out(Shape{length, spec.state_dim()});
  for (std::size_t k = 0; k < length; ++k) set_row(out, k, traj[k]);
  return out;
}

inline Dataset generate_dataset(const SystemSpec& spec, const DataConfig& cfg) {
  spec.validate();
  cfg.validate();
  const std::size_t d = spec.state_dim();
  auto fill = [&](std::size_t count, std::size_t length, std::uint64_t stream) {
    Tensor all(Shape{count, length, d});
    for (std::size_t i = 0; i < count; ++i) {
      const StateVector z0 = sample_initial_state(spec, trajectory_seed(cfg.seed, stream, i), cfg.state_noise);
      const Tensor traj = simulate(spec, z0, length, cfg.dt);
      std::copy(traj.data().begin(), traj.data().end(), all.storage().begin() + static_cast<std::ptrdiff_t>(i * length * d));
    }
    return all;
  };
  return {spec, cfg, fill(cfg.n_train_chunks, cfg.chunk_len, 0), fill(cfg.n_test, cfg.test_len(), 1)};
}

/// States at time index t of the selected trajectories: [rows.size(), D].
inline Tensor time_slice(const Tensor& trajs, std::span<const std::size_t> rows, std::size_t t) {
  const std::size_t len = trajs.dim(1), d = trajs.dim(2);
  Tensor out(Shape{rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t j = 0; j < d; ++j) out.at(r, j) = trajs[(rows[r] * len + t) * d + j];
  return out;
}

inline std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

/// Canonical [q, p] states (any leading shape, last axis D) to the model's coordinates.
inline Tensor to_model_coordinates(const SystemSpec& system, const ModelSpec& model, const Tensor& states) {
  if (!model.velocity_coordinates()) return states;
  const Tensor flat = states.reshaped(Shape{states.size() / states.cols(), states.cols()});
  return map_rows(flat, [&](const StateVector& z) { return to_velocity(system, z); }).reshaped(states.shape());
}

inline Tensor from_model_coordinates(const SystemSpec& system, const ModelSpec& model, const Tensor& states) {
  if (!model.velocity_coordinates()) return states;
  const Tensor flat = states.reshaped(Shape{states.size() / states.cols(), states.cols()});
  return map_rows(flat, [&](const StateVector& z) { return to_momentum(system, z); }).reshaped(states.shape());
}

// ---- losses --------------------------------------------------------------

namespace detail {

inline Tensor step_penalty(const Tensor& pred, const Tensor& target, LossKind kind) {
  const Tensor diff = kernel::sub(pred, target);
  return kind == LossKind::L2 ? kernel::sum(kernel::mul(diff, diff)) : kernel::sum(kernel::abs(diff));
}

inline Var step_penalty(const Var& pred, const Var& target, LossKind kind) {
  const Var diff = sub(pred, target);
  return kind == LossKind::L2 ? sum(square(diff)) : sum(abs(diff));
}

inline Tensor as_state(const Tensor&, Tensor t) { return t; }
inline Var as_state(const Var& like, Tensor t) { return constant_like(like, std::move(t)); }

}  // namespace detail

template <class State>
struct LossValue {
  State value;            // mean over the batch of Σ_t penalty(ẑ_t − z_t)
  bool diverged = false;  // rollout left the finite region; value is the ceiling
};

/// Rollout loss of a batch of chunks [b, T, D]: integrate from state 0 and sum the
/// per-step penalty over the remaining states, averaged over the batch.
template <class State, class Field>
LossValue<State> rollout_loss(Field&& field, const State& anchor, const Tensor& chunks, const IntegratorConfig& integ,
                              LossKind kind) {
  if (chunks.rank() != 3 || chunks.dim(1) < 2) throw ShapeError("chunks must be [b, T >= 2, D]");
  const std::size_t b = chunks.dim(0), len = chunks.dim(1);
  const auto rows = all_rows(b);
  const State z0 = detail::as_state(anchor, time_slice(chunks, rows, 0));
  auto rollout = ode_solve_partial(field, z0, time_grid(len, integ.dt), integ);
  if (rollout.diverged) return {detail::as_state(anchor, Tensor::scalar(kLossCeiling)), true};
  State total = detail::step_penalty(rollout.states[1], detail::as_state(anchor, time_slice(chunks, rows, 1)), kind);
  for (std::size_t t = 2; t < len; ++t)
    total = total + detail::step_penalty(rollout.states[t], detail::as_state(anchor, time_slice(chunks, rows, t)), kind);
  const State mean_loss = (1.0 / static_cast<double>(b)) * total;
  const double v = detail::value_of(mean_loss).item();
  if (!std::isfinite(v) || v > kLossCeiling) return {detail::as_state(anchor, Tensor::scalar(kLossCeiling)), true};
  return {mean_loss, false};
}

/// Recorded training objective: mean rollout loss + β · mean symplectic error at the batch initial states.
struct Objective {
  Var total;
  double rollout = 0.0;
  double regularizer = 0.0;
  bool diverged = false;
};

inline Objective regularized_loss(const ModelSpec& spec, const BoundParams& params, const Tensor& chunks,
                                  const IntegratorConfig& integ, const TrainConfig& cfg) {
  if (cfg.beta > 0.0 && spec.family != Family::NODE)
    throw ConfigError("the symplectic regularizer only applies to NODE, not " + to_string(spec.family));
  Tape& tape = *params.begin()->second.tape();
  const Var anchor = tape.constant(Tensor::scalar(0.0));
  auto field = [&](const Var& z) { return model_field(spec, params, z); };
  const auto loss = rollout_loss(field, anchor, chunks, integ, cfg.loss);
  Objective out{loss.value, detail::value_of(loss.value).item(), 0.0, loss.diverged};
  if (cfg.beta > 0.0 && !loss.diverged) {
    const Tensor z0 = time_slice(chunks, all_rows(chunks.dim(0)), 0);
    const Var reg = symplectic_error(field, tape.variable(z0));
    out.regularizer = reg.value().item();
    out.total = add(loss.value, affine(reg, cfg.beta, 0.0));
  }
  return out;
}

// ---- training loop -------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;        // learning rate of the epoch's last step
  double train_loss = 0.0;
  double reg_term = 0.0;
  double wall_ms = 0.0;
  std::size_t skipped_batches = 0;
};

struct TrainResult {
  ParamStore params;
  std::vector<EpochLog> log;
};

using CheckpointHook = std::function<void(std::size_t epoch, const ParamStore&)>;
using EpochHook = std::function<void(const EpochLog&)>;

/// Trains on dataset.train (canonical coordinates; converted for NODE_SO).
/// Deterministic given (spec, dataset, cfg, init_seed).
inline TrainResult train_model(const ModelSpec& spec, const Dataset& data, const TrainConfig& cfg,
                               const IntegratorConfig& integ, ParamStore init, const CheckpointHook& on_checkpoint = {},
                               const EpochHook& on_epoch = {}) {
  cfg.validate(spec.family);
  integ.validate();
  if (data.state_dim() != spec.state_dim)
    throw ConfigError("dataset has states of dimension " + std::to_string(data.state_dim()) + ", model expects " +
                      std::to_string(spec.state_dim));
  const Tensor chunks = to_model_coordinates(data.system, spec, data.train);
  const std::size_t n = chunks.dim(0), len = chunks.dim(1), d = chunks.dim(2);
  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * per_epoch;
  IntegratorConfig step_integ = integ;
  step_integ.dt = cfg.dt;

  TrainResult result{std::move(init), {}};
  AdamState adam(AdamConfig{cfg.lr_max, 0.9, 0.999, 1e-8, cfg.weight_decay}, result.params);
  std::mt19937_64 shuffle_rng(cfg.seed);
  std::vector<std::size_t> order = all_rows(n);
  std::size_t step = 0, nan_streak = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLog entry;
    entry.epoch = epoch;
    bool saw_nan = false;
    for (std::size_t first = 0; first < n; first += cfg.batch_size, ++step) {
      const std::size_t count = std::min(cfg.batch_size, n - first);
      Tensor batch(Shape{count, len, d});
      for (std::size_t r = 0; r < count; ++r) {
        const auto src = chunks.data().subspan(order[first + r] * len * d, len * d);
        std::copy(src.begin(), src.end(), batch.storage().begin() + static_cast<std::ptrdiff_t>(r * len * d));
      }
      const double lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min);
      entry.lr = lr;

      Tape tape;
      const BoundParams bound = bind_params(tape, result.params);
      const Objective obj = regularized_loss(spec, bound, batch, step_integ, cfg);
      entry.train_loss += obj.rollout / static_cast<double>(per_epoch);
      entry.reg_term += obj.regularizer / static_cast<double>(per_epoch);
      if (obj.diverged || !std::isfinite(obj.total.value().item())) {
        saw_nan = true;
        ++entry.skipped_batches;
        continue;
      }
      std::vector<Var> wrt;
      wrt.reserve(bound.size());
      for (const auto& [name, v] : bound) wrt.push_back(v);
      const auto grads = tape.gradients(obj.total, wrt);
      ParamStore grad_store;
      bool finite = true;
      std::size_t k = 0;
      for (const auto& [name, v] : bound) {
        finite = finite && grads[k].all_finite();
        grad_store.emplace(name, grads[k++]);
      }
      if (!finite) {
        saw_nan = true;
        ++entry.skipped_batches;
        continue;
      }
      adam_step(adam, result.params, grad_store, lr);
    }
    entry.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    nan_streak = saw_nan ? nan_streak + 1 : 0;
    if (nan_streak >= cfg.max_nan_epochs) {
      throw TrainingDiverged("non-finite loss for " + std::to_string(nan_streak) + " consecutive epochs (last epoch " +
                             std::to_string(epoch) + ", loss " + std::to_string(entry.train_loss) + ")");
    }
    if (on_checkpoint && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs)
      on_checkpoint(epoch, result.params);
  }
  if (on_checkpoint) on_checkpoint(cfg.epochs, result.params);
  return result;
}

}  // namespace hnndecon
