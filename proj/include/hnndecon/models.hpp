#pragma once

// Learned vector fields. Every model maps a batch of states z: [b, D] to dz/dt.
//   NODE           F = MLP(z)
//   NODE_SO        z = [q, v],  F = [v, A(q, v)]
//   HNN_GENERAL    F = J ∇Ĥ(z),  Ĥ = MLP(z)
//   HNN_SEPARABLE  Ĥ = ½ pᵀ M(q)⁻¹ p + V(q),  M = L Lᵀ + εI, L lower triangular with exp diagonal
//   HNN_FORCED     separable Ĥ plus [0, g(z) u]

#include "hnndecon/diff.hpp"
#include "hnndecon/integrate.hpp"

#include <nlohmann/json.hpp>

#include <random>
#include <string>

namespace hnndecon {

enum class Family { NODE, NODE_SO, HNN_GENERAL, HNN_SEPARABLE, HNN_FORCED };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::NODE: return "NODE";
    case Family::NODE_SO: return "NODE_SO";
    case Family::HNN_GENERAL: return "HNN_GENERAL";
    case Family::HNN_SEPARABLE: return "HNN_SEPARABLE";
    case Family::HNN_FORCED: return "HNN_FORCED";
  }
  return "?";
}

inline Family family_from_string(const std::string& s) {
  for (Family f : {Family::NODE, Family::NODE_SO, Family::HNN_GENERAL, Family::HNN_SEPARABLE, Family::HNN_FORCED})
    if (to_string(f) == s) return f;
  throw std::invalid_argument("unknown model family '" + s + "'");
}

inline bool is_hamiltonian(Family f) {
  return f == Family::HNN_GENERAL || f == Family::HNN_SEPARABLE || f == Family::HNN_FORCED;
}

/// Jitter added to the learned mass matrix.
inline constexpr double kMassJitter = 1e-6;

struct ModelSpec {
  Family family = Family::NODE;
  std::size_t state_dim = 4;
  std::size_t hidden_width = 128;
  std::size_t hidden_depth = 2;
  bool constant_mass = false;  // separable families: M independent of q
  double control = 1.0;        // HNN_FORCED: the constant scalar input u

  std::size_t dof() const { return state_dim / 2; }
  /// State coordinates the model integrates in: [q, v] for NODE_SO, [q, p] otherwise.
  bool velocity_coordinates() const { return family == Family::NODE_SO; }
  bool separable() const { return family == Family::HNN_SEPARABLE || family == Family::HNN_FORCED; }
  std::size_t mass_entries() const { return dof() * (dof() + 1) / 2; }

  void validate() const {
    if (state_dim == 0) throw std::invalid_argument("state_dim must be positive");
    if (family != Family::NODE && state_dim % 2 != 0)
      throw std::invalid_argument(to_string(family) + " needs an even state dimension");
    if (hidden_depth > 0 && hidden_width == 0) throw std::invalid_argument("hidden_width must be positive");
  }

  Mlp net(std::string prefix, std::size_t in, std::size_t out) const {
    return Mlp::make(std::move(prefix), in, hidden_width, hidden_depth, out);
  }

  /// All networks, in initialization order.
  std::vector<Mlp> networks() const {
    const std::size_t d = dof(), n = state_dim;
    switch (family) {
      case Family::NODE: return {net("f", n, n)};
      case Family::NODE_SO: return {net("a", n, d)};
      case Family::HNN_GENERAL: return {net("h", n, 1)};
      case Family::HNN_SEPARABLE:
      case Family::HNN_FORCED: {
        std::vector<Mlp> nets{net("v", d, 1)};
        if (!constant_mass) nets.push_back(net("l", d, mass_entries()));
        if (family == Family::HNN_FORCED) nets.push_back(net("g", n, d));
        return nets;
      }
    }
    return {};
  }
};

inline nlohmann::json to_json(const ModelSpec& m) {
  return {{"family", to_string(m.family)}, {"state_dim", m.state_dim},       {"hidden_width", m.hidden_width},
          {"hidden_depth", m.hidden_depth}, {"constant_mass", m.constant_mass}, {"control", m.control}};
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec m;
  m.family = family_from_string(j.at("family").get<std::string>());
  m.state_dim = j.value("state_dim", m.state_dim);
  m.hidden_width = j.value("hidden_width", m.hidden_width);
  m.hidden_depth = j.value("hidden_depth", m.hidden_depth);
  m.constant_mass = j.value("constant_mass", m.constant_mass);
  m.control = j.value("control", m.control);
  m.validate();
  return m;
}

/// Parameter name of the constant mass factor used when constant_mass is set.
inline const std::string kConstantMassParam = "l_const";

inline ParamStore init_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  ParamStore store;
  for (const Mlp& net : spec.networks()) init_mlp(store, net, rng);
  if (spec.separable() && spec.constant_mass) store[kConstantMassParam] = Tensor(Shape{spec.mass_entries()});
  return store;
}

inline std::size_t parameter_count(const ParamStore& store) {
  std::size_t n = 0;
  for (const auto& [name, t] : store) n += t.size();
  return n;
}

// ---- structural helpers --------------------------------------------------

namespace detail {

inline Var batch_ones(const Var& like, std::size_t cols) {
  return constant_like(like, Tensor(Shape{like.value().rows(), cols}, 1.0));
}

// Column maps that read the packed lower triangle (row-major, i ≥ j) into a flat d×d matrix.
struct TriangleMaps {
  ColumnMapPtr diag_src, diag_dst, off_src, off_dst;
};

inline const TriangleMaps& triangle_maps(std::size_t d) {
  static thread_local std::map<std::size_t, TriangleMaps> cache;
  if (auto it = cache.find(d); it != cache.end()) return it->second;
  std::vector<int> ds, dd, os, od;
  int k = 0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j, ++k) {
      const int flat = static_cast<int>(i * d + j);
      if (i == j) {
        ds.push_back(k);
        dd.push_back(flat);
      } else {
        os.push_back(k);
        od.push_back(flat);
      }
    }
  }
  TriangleMaps maps{column_map(ds), column_map(dd), column_map(os), column_map(od)};
  return cache.emplace(d, std::move(maps)).first->second;
}

// Column map realizing z -> J z on [b, 2d] rows: (J z)_i = z_{i+d}, (J z)_{i+d} = −z_i.
inline ColumnMapPtr symplectic_map(std::size_t d) {
  std::vector<int> idx(2 * d);
  std::vector<double> w(2 * d);
  for (std::size_t i = 0; i < d; ++i) {
    idx[i] = static_cast<int>(i + d);
    w[i] = 1.0;
    idx[i + d] = static_cast<int>(i);
    w[i + d] = -1.0;
  }
  return column_map(std::move(idx), std::move(w));
}

}  // namespace detail

/// J x for a batch of row vectors x: [b, 2d].
template <class T>
T apply_structure(const T& x) {
  const std::size_t n = detail::value_of(x).cols();
  if (n % 2 != 0) throw ShapeError("J needs an even dimension, got " + std::to_string(n));
  return gather_cols(x, detail::symplectic_map(n / 2));
}

/// Lower-triangular factor [b, d, d] from packed entries [b, d(d+1)/2]; diagonal is exp(raw).
inline Var mass_factor(const Var& packed, std::size_t d) {
  const auto& m = detail::triangle_maps(d);
  const Var diag = scatter_cols(exp(gather_cols(packed, m.diag_src)), m.diag_dst, d * d);
  Var flat = diag;
  if (d > 1) flat = add(diag, scatter_cols(gather_cols(packed, m.off_src), m.off_dst, d * d));
  return reshape(flat, Shape{packed.value().rows(), d, d});
}

/// M(q) = L Lᵀ + εI, batched [b, d, d].
inline Var learned_mass_matrix(const ModelSpec& spec, const BoundParams& params, const Var& q) {
  const std::size_t d = spec.dof(), b = q.value().rows();
  Var packed;
  if (spec.constant_mass) {
    packed = broadcast_rows(lookup(params, kConstantMassParam), b);
  } else {
    packed = mlp_forward(spec.net("l", d, spec.mass_entries()), params, q);
  }
  const Var l = mass_factor(packed, d);
  Tensor jitter(Shape{b, d, d});
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t i = 0; i < d; ++i) jitter[(s * d + i) * d + i] = kMassJitter;
  return add(matmul(l, l, false, true), constant_like(q, std::move(jitter)));
}

// ---- Hamiltonians and fields (recorded) ----------------------------------

/// J ∇Ĥ(z) for any recorded scalar-per-row function H: [b, D] -> [b, 1].
template <class Hamiltonian>
Var hamiltonian_field(Hamiltonian&& h, const Var& z) {
  const Var energy = h(z);
  const Var grad = z.tape()->grad(energy, detail::batch_ones(z, 1), z);
  return apply_structure(grad);
}

namespace detail {

struct SeparableParts {
  Var q, velocity, energy;
};

inline SeparableParts separable_parts(const ModelSpec& spec, const BoundParams& params, const Var& z) {
  const std::size_t d = spec.dof(), b = z.value().rows();
  const Var q = first_half(z), p = second_half(z);
  const Var x = reshape(solve(learned_mass_matrix(spec, params, q), reshape(p, Shape{b, d, 1})), Shape{b, d});
  const Var half = z.tape()->constant(Tensor(Shape{d, 1}, 0.5));
  const Var energy = add(matmul(mul(p, x), half), mlp_forward(spec.net("v", d, 1), params, q));
  return {q, x, energy};
}

}  // namespace detail

/// Separable Ĥ = ½ pᵀ M(q)⁻¹ p + V(q) as [b, 1].
inline Var separable_hamiltonian(const ModelSpec& spec, const BoundParams& params, const Var& z) {
  return detail::separable_parts(spec, params, z).energy;
}

/// Learned energy per row, [b, 1]. Hamiltonian families only.
inline Var learned_hamiltonian(const ModelSpec& spec, const BoundParams& params, const Var& z) {
  if (spec.family == Family::HNN_GENERAL) return mlp_forward(spec.net("h", spec.state_dim, 1), params, z);
  if (spec.separable()) return separable_hamiltonian(spec, params, z);
  throw ContractError(to_string(spec.family) + " has no learned Hamiltonian");
}

/// Structured separable field: dq/dt = M(q)⁻¹ p from the solve, dp/dt = −∂Ĥ/∂q.
inline Var separable_field(const ModelSpec& spec, const BoundParams& params, const Var& z) {
  const auto parts = detail::separable_parts(spec, params, z);
  const Var dhdq = z.tape()->grad(parts.energy, detail::batch_ones(z, 1), parts.q);
  return join_halves(parts.velocity, neg(dhdq));
}

/// dz/dt for a batch z: [b, D] in the model's own coordinates.
inline Var model_field(const ModelSpec& spec, const BoundParams& params, const Var& z) {
  const std::size_t n = spec.state_dim, d = spec.dof();
  if (z.value().rank() != 2 || z.value().cols() != n)
    throw ShapeError(to_string(spec.family) + " expects states [b, " + std::to_string(n) + "], got " +
                     shape_string(z.shape()));
  switch (spec.family) {
    case Family::NODE:
      return mlp_forward(spec.net("f", n, n), params, z);
    case Family::NODE_SO:
      return join_halves(second_half(z), mlp_forward(spec.net("a", n, d), params, z));
    case Family::HNN_GENERAL:
      return hamiltonian_field([&](const Var& x) { return learned_hamiltonian(spec, params, x); }, z);
    case Family::HNN_SEPARABLE:
      return separable_field(spec, params, z);
    case Family::HNN_FORCED: {
      const Var base = separable_field(spec, params, z);
      if (spec.control == 0.0) return base;
      const Var force = affine(mlp_forward(spec.net("g", n, d), params, z), spec.control, 0.0);
      return add(base, scatter_cols(force, column_range(d, n), n));
    }
  }
  throw ContractError("unknown model family");
}

// ---- plain-tensor evaluation ---------------------------------------------

/// Evaluates a recorded computation on a scratch tape with the parameters as constants.
template <class Fn>
Tensor evaluate(const ParamStore& params, const Tensor& z, Fn&& fn) {
  Tape tape;
  BoundParams bound;
  for (const auto& [name, value] : params) bound.emplace(name, tape.constant(value));
  return fn(bound, tape.variable(z)).value();
}

inline Tensor model_field(const ModelSpec& spec, const ParamStore& params, const Tensor& z) {
  return evaluate(params, z, [&](const BoundParams& b, const Var& x) { return model_field(spec, b, x); });
}

inline Tensor learned_hamiltonian(const ModelSpec& spec, const ParamStore& params, const Tensor& z) {
  return evaluate(params, z, [&](const BoundParams& b, const Var& x) { return learned_hamiltonian(spec, b, x); });
}

// ---- symplectic error ----------------------------------------------------

namespace detail {

// For DF flattened row-major to [b, D²], maps that read S = J·DF and Sᵀ.
inline std::pair<ColumnMapPtr, ColumnMapPtr> structure_maps(std::size_t n) {
  const std::size_t d = n / 2;
  auto src = [&](std::size_t i) { return i < d ? i + d : i - d; };
  auto sgn = [&](std::size_t i) { return i < d ? 1.0 : -1.0; };
  std::vector<int> si(n * n), ti(n * n);
  std::vector<double> sw(n * n), tw(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      si[i * n + j] = static_cast<int>(src(i) * n + j);  // S_ij = ±DF_{src(i), j}
      sw[i * n + j] = sgn(i);
      ti[i * n + j] = static_cast<int>(src(j) * n + i);  // S_ji
      tw[i * n + j] = sgn(j);
    }
  }
  return {column_map(std::move(si), std::move(sw)), column_map(std::move(ti), std::move(tw))};
}

}  // namespace detail

/// ‖Sᵀ − S‖²_F with S = J·DF(z), one value per row of z: [b, D] -> [b, 1].
/// Differentiable with respect to whatever F depends on.
template <class Field>
Var symplectic_error_rows(Field&& f, const Var& z) {
  const std::size_t b = z.value().rows(), n = z.value().cols();
  if (n % 2 != 0) throw ShapeError("symplectic error needs an even state dimension");
  const Var flat = reshape(jacobian(std::forward<Field>(f), z), Shape{b, n * n});
  const auto [s_map, t_map] = detail::structure_maps(n);
  const Var asym = sub(gather_cols(flat, t_map), gather_cols(flat, s_map));
  return matmul(square(asym), z.tape()->constant(Tensor(Shape{n * n, 1}, 1.0)));
}

/// Mean symplectic error over the rows of z, as a recorded scalar.
template <class Field>
Var symplectic_error(Field&& f, const Var& z) {
  return mean(symplectic_error_rows(std::forward<Field>(f), z));
}

/// Symplectic error of a learned model at each row of z: [b, D] -> [b].
inline std::vector<double> symplectic_errors(const ModelSpec& spec, const ParamStore& params, const Tensor& z) {
  const Tensor e = evaluate(params, z, [&](const BoundParams& bound, const Var& x) {
    return symplectic_error_rows([&](const Var& s) { return model_field(spec, bound, s); }, x);
  });
  return {e.data().begin(), e.data().end()};
}

}  // namespace hnndecon
