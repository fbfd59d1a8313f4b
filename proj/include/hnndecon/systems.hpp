#pragma once

// Analytic ground-truth mechanical systems in canonical coordinates z = [q, p].
//
// Chain pendulum: q are link angles from the downward vertical.
//   H = ½ pᵀ M(q)⁻¹ p − g Σ_i c_i l_i cos q_i,
//   M_ij = c_max(i,j) l_i l_j cos(q_i − q_j),  c_i = Σ_{k≥i} m_k.
// Spring pendulum (planar): q = [x_1, y_1, x_2, y_2, ...], anchor at the origin.
//   H = Σ_i ‖p_i‖²/(2 m_i) + Σ_i ½ k (‖q_i − q_{i−1}‖ − l_i)² + g Σ_i m_i y_i.
// Drag adds −λ M(q)⁻¹ p = −λ v to dp/dt.

#include "hnndecon/tensor.hpp"

#include <Eigen/Dense>

#include <optional>
#include <sstream>
#include <random>
#include <string>

namespace hnndecon {

using StateVector = Eigen::VectorXd;

enum class SystemFamily { ChainPendulum, SpringPendulum };

inline std::string to_string(SystemFamily f) {
  return f == SystemFamily::ChainPendulum ? "ChainPendulum" : "SpringPendulum";
}

inline SystemFamily system_family_from_string(const std::string& s) {
  if (s == "ChainPendulum") return SystemFamily::ChainPendulum;
  if (s == "SpringPendulum") return SystemFamily::SpringPendulum;
  throw std::invalid_argument("unknown system family '" + s + "'");
}

struct SystemSpec {
  SystemFamily family = SystemFamily::ChainPendulum;
  int n_links = 2;
  std::vector<double> masses{1.0, 1.0};
  std::vector<double> lengths{1.0, 1.0};  // link lengths (chain) or spring rest lengths
  double spring_k = 10.0;                 // spring only
  double gravity = 1.0;
  double drag = 0.0;

  static SystemSpec chain(int links, double drag = 0.0) {
    SystemSpec s;
    s.family = SystemFamily::ChainPendulum;
    s.n_links = links;
    s.masses.assign(static_cast<std::size_t>(links), 1.0);
    s.lengths.assign(static_cast<std::size_t>(links), 1.0);
    s.drag = drag;
    return s;
  }

  static SystemSpec spring(int links, double drag = 0.0) {
    SystemSpec s = chain(links, drag);
    s.family = SystemFamily::SpringPendulum;
    return s;
  }

  std::size_t links() const { return static_cast<std::size_t>(n_links); }
  std::size_t dof() const { return family == SystemFamily::ChainPendulum ? links() : 2 * links(); }
  std::size_t state_dim() const { return 2 * dof(); }
  bool conservative() const { return drag == 0.0; }

  std::string name() const {
    std::string n = std::to_string(n_links) + "-" + to_string(family);
    if (drag != 0.0) {
      std::ostringstream os;
      os << "-drag" << drag;
      n += os.str();
    }
    return n;
  }

  void validate() const {
    if (n_links <= 0) throw std::invalid_argument("n_links must be positive");
    if (masses.size() != links()) throw std::invalid_argument("need one mass per link");
    for (double m : masses)
      if (!(m > 0.0)) throw std::invalid_argument("masses must be strictly positive");
    if (lengths.size() != links()) throw std::invalid_argument("need one length per link");
    for (double l : lengths)
      if (!(l > 0.0)) throw std::invalid_argument("lengths must be strictly positive");
    if (family == SystemFamily::SpringPendulum && !(spring_k > 0.0))
      throw std::invalid_argument("spring_k must be strictly positive");
    if (!(drag >= 0.0)) throw std::invalid_argument("drag must be non-negative");
  }
};

/// Thrown when the mass matrix is not positive definite.
class SingularMassMatrix : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void check_state(const SystemSpec& spec, const StateVector& z) {
  if (static_cast<std::size_t>(z.size()) != spec.state_dim()) {
    throw ShapeError("state has dimension " + std::to_string(z.size()) + ", " + spec.name() + " needs " +
                     std::to_string(spec.state_dim()));
  }
}

// c_i = Σ_{k≥i} m_k
inline std::vector<double> tail_masses(const SystemSpec& spec) {
  std::vector<double> c(spec.links());
  double acc = 0.0;
  for (std::size_t i = spec.links(); i-- > 0;) c[i] = (acc += spec.masses[i]);
  return c;
}

}  // namespace detail

/// J = [[0, I], [−I, 0]] for `dof` degrees of freedom.
inline Eigen::MatrixXd canonical_structure(std::size_t dof) {
  const auto d = static_cast<Eigen::Index>(dof);
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  j.topRightCorner(d, d).setIdentity();
  j.bottomLeftCorner(d, d) = -Eigen::MatrixXd::Identity(d, d);
  return j;
}

inline Eigen::MatrixXd mass_matrix(const SystemSpec& spec, const Eigen::VectorXd& q) {
  const std::size_t n = spec.dof();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  if (spec.family == SystemFamily::ChainPendulum) {
    const auto c = detail::tail_masses(spec);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        m(i, j) = c[std::max(i, j)] * spec.lengths[i] * spec.lengths[j] * std::cos(q(i) - q(j));
  } else {
    for (std::size_t i = 0; i < n; ++i) m(i, i) = spec.masses[i / 2];
  }
  return m;
}

/// dM/dt along a motion with generalized velocity qdot.
inline Eigen::MatrixXd mass_matrix_rate(const SystemSpec& spec, const Eigen::VectorXd& q,
                                        const Eigen::VectorXd& qdot) {
  const std::size_t n = spec.dof();
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  if (spec.family == SystemFamily::ChainPendulum) {
    const auto c = detail::tail_masses(spec);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        r(i, j) = -c[std::max(i, j)] * spec.lengths[i] * spec.lengths[j] * std::sin(q(i) - q(j)) *
                  (qdot(i) - qdot(j));
  }
  return r;
}

inline Eigen::LLT<Eigen::MatrixXd> factor_mass(const SystemSpec& spec, const Eigen::VectorXd& q) {
  Eigen::LLT<Eigen::MatrixXd> llt(mass_matrix(spec, q));
  if (llt.info() != Eigen::Success) throw SingularMassMatrix("mass matrix of " + spec.name() + " is not positive definite");
  return llt;
}

inline double potential(const SystemSpec& spec, const Eigen::VectorXd& q) {
  double v = 0.0;
  if (spec.family == SystemFamily::ChainPendulum) {
    const auto c = detail::tail_masses(spec);
    for (std::size_t i = 0; i < spec.links(); ++i) v -= spec.gravity * c[i] * spec.lengths[i] * std::cos(q(i));
  } else {
    Eigen::Vector2d prev = Eigen::Vector2d::Zero();
    for (std::size_t i = 0; i < spec.links(); ++i) {
      const Eigen::Vector2d cur = q.segment<2>(static_cast<Eigen::Index>(2 * i));
      const double stretch = (cur - prev).norm() - spec.lengths[i];
      v += 0.5 * spec.spring_k * stretch * stretch + spec.gravity * spec.masses[i] * cur.y();
      prev = cur;
    }
  }
  return v;
}

inline Eigen::VectorXd potential_gradient(const SystemSpec& spec, const Eigen::VectorXd& q) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.dof()));
  if (spec.family == SystemFamily::ChainPendulum) {
    const auto c = detail::tail_masses(spec);
    for (std::size_t i = 0; i < spec.links(); ++i) g(i) = spec.gravity * c[i] * spec.lengths[i] * std::sin(q(i));
  } else {
    Eigen::Vector2d prev = Eigen::Vector2d::Zero();
    for (std::size_t i = 0; i < spec.links(); ++i) {
      const auto at = static_cast<Eigen::Index>(2 * i);
      const Eigen::Vector2d cur = q.segment<2>(at);
      const Eigen::Vector2d d = cur - prev;
      const double r = d.norm();
      const Eigen::Vector2d force = spec.spring_k * (r - spec.lengths[i]) / r * d;
      g.segment<2>(at) += force;
      if (i > 0) g.segment<2>(at - 2) -= force;
      g(at + 1) += spec.gravity * spec.masses[i];
      prev = cur;
    }
  }
  return g;
}

inline double true_hamiltonian(const SystemSpec& spec, const StateVector& z) {
  detail::check_state(spec, z);
  const auto n = static_cast<Eigen::Index>(spec.dof());
  const Eigen::VectorXd q = z.head(n), p = z.tail(n);
  const Eigen::VectorXd v = factor_mass(spec, q).solve(p);
  return 0.5 * p.dot(v) + potential(spec, q);
}

/// ∇H = [∂H/∂q, ∂H/∂p], hand-differentiated from true_hamiltonian.
inline StateVector hamiltonian_gradient(const SystemSpec& spec, const StateVector& z) {
  detail::check_state(spec, z);
  const auto n = static_cast<Eigen::Index>(spec.dof());
  const Eigen::VectorXd q = z.head(n), p = z.tail(n);
  const Eigen::VectorXd v = factor_mass(spec, q).solve(p);
  StateVector grad(2 * n);
  grad.head(n) = potential_gradient(spec, q);
  if (spec.family == SystemFamily::ChainPendulum) {
    // ∂/∂q_k of ½ pᵀM⁻¹p = −½ vᵀ (∂M/∂q_k) v = Σ_j v_k v_j c_max(k,j) l_k l_j sin(q_k − q_j)
    const auto c = detail::tail_masses(spec);
    for (Eigen::Index k = 0; k < n; ++k) {
      double acc = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        acc += v(k) * v(j) * c[static_cast<std::size_t>(std::max(k, j))] * spec.lengths[static_cast<std::size_t>(k)] *
               spec.lengths[static_cast<std::size_t>(j)] * std::sin(q(k) - q(j));
      }
      grad(k) += acc;
    }
  }
  grad.tail(n) = v;
  return grad;
}

/// F(z) = J∇H(z) + [0, −λ M(q)⁻¹ p].
inline StateVector true_dynamics(const SystemSpec& spec, const StateVector& z) {
  const StateVector grad = hamiltonian_gradient(spec, z);
  const auto n = static_cast<Eigen::Index>(spec.dof());
  StateVector f(2 * n);
  f.head(n) = grad.tail(n);
  f.tail(n) = -grad.head(n) - spec.drag * grad.tail(n);
  return f;
}

/// [q, p] -> [q, v] with v = M(q)⁻¹ p.
inline StateVector to_velocity(const SystemSpec& spec, const StateVector& z) {
  detail::check_state(spec, z);
  const auto n = static_cast<Eigen::Index>(spec.dof());
  StateVector out = z;
  out.tail(n) = factor_mass(spec, z.head(n)).solve(z.tail(n));
  return out;
}

/// [q, v] -> [q, p] with p = M(q) v.
inline StateVector to_momentum(const SystemSpec& spec, const StateVector& zv) {
  detail::check_state(spec, zv);
  const auto n = static_cast<Eigen::Index>(spec.dof());
  StateVector out = zv;
  out.tail(n) = mass_matrix(spec, zv.head(n)) * zv.tail(n);
  return out;
}

/// Minimum-energy configuration: chain hanging straight down, springs stretched by the load below them.
inline StateVector rest_state(const SystemSpec& spec) {
  StateVector z = StateVector::Zero(static_cast<Eigen::Index>(spec.state_dim()));
  if (spec.family == SystemFamily::SpringPendulum) {
    const auto c = detail::tail_masses(spec);
    double y = 0.0;
    for (std::size_t i = 0; i < spec.links(); ++i) {
      y -= spec.lengths[i] + spec.gravity * c[i] / spec.spring_k;
      z(static_cast<Eigen::Index>(2 * i + 1)) = y;
    }
  }
  return z;
}

/// Default noise scale of sample_initial_state for a family.
inline double default_state_noise(SystemFamily family) {
  return family == SystemFamily::ChainPendulum ? 0.3 : 0.1;
}

/// Rest state plus independent Gaussian noise on every coordinate.
inline StateVector sample_initial_state(const SystemSpec& spec, std::uint64_t seed,
                                        std::optional<double> noise = std::nullopt) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, noise.value_or(default_state_noise(spec.family)));
  StateVector z = rest_state(spec);
  if (noise.value_or(1.0) == 0.0) return z;
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) += dist(rng);
  return z;
}

// ---- row-wise helpers over [batch, D] tensors ----------------------------

inline StateVector row_state(const Tensor& t, std::size_t r) {
  StateVector z(static_cast<Eigen::Index>(t.cols()));
  for (std::size_t j = 0; j < t.cols(); ++j) z(static_cast<Eigen::Index>(j)) = t.at(r, j);
  return z;
}

inline void set_row(Tensor& t, std::size_t r, const StateVector& z) {
  for (std::size_t j = 0; j < t.cols(); ++j) t.at(r, j) = z(static_cast<Eigen::Index>(j));
}

template <class Fn>
Tensor map_rows(const Tensor& t, Fn fn) {
  Tensor out(t.shape());
  for (std::size_t r = 0; r < t.rows(); ++r) set_row(out, r, fn(row_state(t, r)));
  return out;
}

}  // namespace hnndecon
