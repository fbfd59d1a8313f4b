#include "hnndecon/integrate.hpp"
#include "hnndecon/systems.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace hnndecon {
namespace {

std::vector<SystemSpec> all_specs() {
  return {SystemSpec::chain(1), SystemSpec::chain(2), SystemSpec::chain(3), SystemSpec::spring(1),
          SystemSpec::spring(2)};
}

Eigen::VectorXd fd_gradient(const SystemSpec& spec, Eigen::VectorXd z, double h = 1e-5) {
  Eigen::VectorXd g(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double x = z(i);
    z(i) = x + h;
    const double up = true_hamiltonian(spec, z);
    z(i) = x - h;
    const double down = true_hamiltonian(spec, z);
    z(i) = x;
    g(i) = (up - down) / (2 * h);
  }
  return g;
}

Eigen::MatrixXd fd_dynamics_jacobian(const SystemSpec& spec, Eigen::VectorXd z, double h = 1e-5) {
  Eigen::MatrixXd d(z.size(), z.size());
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    const double x = z(j);
    z(j) = x + h;
    const Eigen::VectorXd up = true_dynamics(spec, z);
    z(j) = x - h;
    const Eigen::VectorXd down = true_dynamics(spec, z);
    z(j) = x;
    d.col(j) = (up - down) / (2 * h);
  }
  return d;
}

// Chain kinetic and potential energy from the bob positions directly.
double cartesian_energy(const SystemSpec& spec, const Eigen::VectorXd& theta, const Eigen::VectorXd& omega) {
  double x = 0, y = 0, vx = 0, vy = 0, t = 0, v = 0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double l = spec.lengths[static_cast<std::size_t>(i)], m = spec.masses[static_cast<std::size_t>(i)];
    x += l * std::sin(theta(i));
    y -= l * std::cos(theta(i));
    vx += l * std::cos(theta(i)) * omega(i);
    vy += l * std::sin(theta(i)) * omega(i);
    t += 0.5 * m * (vx * vx + vy * vy);
    v += m * spec.gravity * y;
  }
  (void)x;
  return t + v;
}

TEST(Systems, DimensionsAndStructure) {
  EXPECT_EQ(SystemSpec::chain(2).state_dim(), 4u);
  EXPECT_EQ(SystemSpec::spring(2).state_dim(), 8u);
  const Eigen::MatrixXd j = canonical_structure(3);
  EXPECT_TRUE((j.transpose() + j).isZero(0));
  EXPECT_TRUE((j * j + Eigen::MatrixXd::Identity(6, 6)).isZero(0));
  EXPECT_EQ(SystemSpec::chain(2, 0.1).name(), "2-ChainPendulum-drag0.1");
  EXPECT_TRUE(SystemSpec::chain(2).conservative());
  EXPECT_FALSE(SystemSpec::spring(2, 0.1).conservative());
}

TEST(Systems, InvalidSpecsRejected) {
  SystemSpec s = SystemSpec::chain(2);
  s.masses[0] = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = SystemSpec::spring(2);
  s.spring_k = -1;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = SystemSpec::chain(2, -0.1);
  EXPECT_THROW(s.validate(), std::invalid_argument);
  EXPECT_THROW(true_hamiltonian(SystemSpec::chain(2), Eigen::VectorXd::Zero(3)), ShapeError);
}

TEST(Systems, SingleLinkAtRestHasMinusOneEnergy) {
  EXPECT_DOUBLE_EQ(true_hamiltonian(SystemSpec::chain(1), Eigen::Vector2d(0, 0)), -1.0);
}

TEST(Systems, ZeroMomentumGivesPotential) {
  std::mt19937_64 rng(3);
  for (const auto& spec : all_specs()) {
    Eigen::VectorXd z = sample_initial_state(spec, rng());
    const auto n = static_cast<Eigen::Index>(spec.dof());
    z.tail(n).setZero();
    EXPECT_EQ(true_hamiltonian(spec, z), potential(spec, z.head(n))) << spec.name();
  }
}

TEST(Systems, ChainEnergyMatchesCartesianLagrangian) {
  SystemSpec spec = SystemSpec::chain(2);
  spec.masses = {1.3, 0.7};
  spec.lengths = {0.8, 1.4};
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::Vector4d z(n(rng), n(rng), n(rng), n(rng));
    const Eigen::VectorXd omega = mass_matrix(spec, z.head(2)).ldlt().solve(z.tail(2));
    EXPECT_NEAR(true_hamiltonian(spec, z), cartesian_energy(spec, z.head(2), omega), 1e-12);
  }
}

TEST(Systems, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (auto spec : all_specs()) {
    if (spec.family == SystemFamily::ChainPendulum) {
      for (std::size_t i = 0; i < spec.links(); ++i) {
        spec.masses[i] = 0.5 + 0.3 * static_cast<double>(i);
        spec.lengths[i] = 1.2 - 0.2 * static_cast<double>(i);
      }
    }
    for (int trial = 0; trial < 30; ++trial) {
      const Eigen::VectorXd z = sample_initial_state(spec, rng(), 0.8);
      const Eigen::VectorXd g = hamiltonian_gradient(spec, z), fd = fd_gradient(spec, z);
      EXPECT_LT((g - fd).norm() / std::max(1.0, fd.norm()), 1e-6) << spec.name();
      const Eigen::VectorXd f = true_dynamics(spec, z);
      const Eigen::VectorXd jfd = canonical_structure(spec.dof()) * fd;
      EXPECT_LT((f - jfd).cwiseAbs().maxCoeff() / std::max(1.0, jfd.cwiseAbs().maxCoeff()), 1e-6);
    }
  }
}

TEST(Systems, StableEquilibriumIsFixedPoint) {
  EXPECT_TRUE(true_dynamics(SystemSpec::chain(1), Eigen::Vector2d(0, 0)).isZero(0));
  for (int n : {1, 2, 3}) {
    const auto spec = SystemSpec::spring(n);
    EXPECT_LT(true_dynamics(spec, rest_state(spec)).cwiseAbs().maxCoeff(), 1e-14);
  }
  const auto rest = rest_state(SystemSpec::spring(2));
  EXPECT_DOUBLE_EQ(rest(1), -1.2);
  EXPECT_DOUBLE_EQ(rest(3), -2.3);
}

TEST(Systems, DragTermIsMinusLambdaVelocity) {
  std::mt19937_64 rng(8);
  for (const auto& base : all_specs()) {
    SystemSpec damped = base;
    damped.drag = 0.1;
    const Eigen::VectorXd z = sample_initial_state(base, rng());
    const auto n = static_cast<Eigen::Index>(base.dof());
    const Eigen::VectorXd diff = true_dynamics(damped, z) - true_dynamics(base, z);
    const Eigen::VectorXd v = mass_matrix(base, z.head(n)).ldlt().solve(z.tail(n));
    EXPECT_TRUE(diff.head(n).isZero(0));
    EXPECT_LT((diff.tail(n) + 0.1 * v).cwiseAbs().maxCoeff(), 1e-14);
  }
}

// Drag is −λv on dp/dt and dH/dp = v, so the power is −λ‖v‖².
TEST(Systems, DragPowerIsNegative) {
  std::mt19937_64 rng(9);
  for (auto spec : all_specs()) {
    spec.drag = 0.1;
    const Eigen::VectorXd z = sample_initial_state(spec, rng());
    const auto n = static_cast<Eigen::Index>(spec.dof());
    const Eigen::VectorXd v = mass_matrix(spec, z.head(n)).ldlt().solve(z.tail(n));
    const double dhdt = hamiltonian_gradient(spec, z).dot(true_dynamics(spec, z));
    EXPECT_NEAR(dhdt, -0.1 * v.dot(v), 1e-12);
    EXPECT_LE(dhdt, 0.0);
  }
}

TEST(Systems, SamplingIsDeterministic) {
  for (const auto& spec : all_specs()) EXPECT_EQ(sample_initial_state(spec, 42), sample_initial_state(spec, 42));
  EXPECT_NE(sample_initial_state(SystemSpec::chain(2), 1), sample_initial_state(SystemSpec::chain(2), 2));
}

TEST(Systems, SampleMomentsMatchConfiguredDistribution) {
  constexpr int kSamples = 10000;
  for (const auto& spec : {SystemSpec::chain(2), SystemSpec::spring(2)}) {
    const double sigma = default_state_noise(spec.family);
    const Eigen::VectorXd mean = rest_state(spec);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(mean.size());
    for (int s = 0; s < kSamples; ++s) acc += sample_initial_state(spec, static_cast<std::uint64_t>(s) + 1000);
    acc /= kSamples;
    const double tol = 5 * sigma / std::sqrt(double(kSamples));
    for (Eigen::Index i = 0; i < mean.size(); ++i) EXPECT_NEAR(acc(i), mean(i), tol) << spec.name() << " coord " << i;
  }
}

TEST(Systems, ZeroNoiseSpringSampleIsRestConfiguration) {
  const auto spec = SystemSpec::spring(2);
  const Eigen::VectorXd z = sample_initial_state(spec, 7, 0.0);
  EXPECT_EQ(z, rest_state(spec));
  EXPECT_EQ(true_hamiltonian(spec, z), potential(spec, z.head(4)));
  // Rest is the potential minimum: small displacements only raise V.
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::VectorXd nudge = sample_initial_state(spec, rng(), 0.05);
    EXPECT_GE(potential(spec, nudge.head(4)), potential(spec, z.head(4)));
  }
}

TEST(Systems, ChainMassMatrixIsPositiveDefinite) {
  for (int n : {1, 2, 3, 5}) {
    const auto spec = SystemSpec::chain(n);
    for (std::uint64_t s = 0; s < 500; ++s) {
      const Eigen::VectorXd z = sample_initial_state(spec, s, 1.5);
      Eigen::LLT<Eigen::MatrixXd> llt(mass_matrix(spec, z.head(n)));
      ASSERT_EQ(llt.info(), Eigen::Success);
    }
  }
}

TEST(Systems, MassMatrixRateMatchesFiniteDifferences) {
  const auto spec = SystemSpec::chain(3);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 1);
  Eigen::Vector3d q(n(rng), n(rng), n(rng)), qd(n(rng), n(rng), n(rng));
  const double h = 1e-6;
  const Eigen::MatrixXd fd = (mass_matrix(spec, q + h * qd) - mass_matrix(spec, q - h * qd)) / (2 * h);
  EXPECT_LT((fd - mass_matrix_rate(spec, q, qd)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_TRUE(mass_matrix_rate(SystemSpec::spring(2), Eigen::VectorXd::Zero(4), Eigen::VectorXd::Ones(4)).isZero(0));
}

TEST(Systems, VelocityMomentumRoundTrip) {
  for (const auto& spec : all_specs()) {
    const Eigen::VectorXd z = sample_initial_state(spec, 17);
    EXPECT_LT((to_momentum(spec, to_velocity(spec, z)) - z).cwiseAbs().maxCoeff(), 1e-13);
  }
}

TEST(Systems, ConservativeFieldIsSymplectic) {
  std::mt19937_64 rng(21);
  for (const auto& spec : all_specs()) {
    const Eigen::MatrixXd j = canonical_structure(spec.dof());
    for (int trial = 0; trial < 10; ++trial) {
      const Eigen::VectorXd z = sample_initial_state(spec, rng());
      const Eigen::MatrixXd s = j * fd_dynamics_jacobian(spec, z);
      EXPECT_LT((s.transpose() - s).norm(), 1e-8) << spec.name();
    }
  }
}

double worst_relative_drift(const SystemSpec& spec, std::uint64_t seed) {
  const Eigen::VectorXd z0 = sample_initial_state(spec, seed);
  auto field = [&](const Eigen::VectorXd& z) { return true_dynamics(spec, z); };
  const auto traj = ode_solve(field, z0, time_grid(101, 0.1), ground_truth_integrator(0.1));
  const double h0 = true_hamiltonian(spec, z0);
  double worst = 0;
  for (const auto& z : traj) worst = std::max(worst, std::abs(true_hamiltonian(spec, z) - h0) / std::abs(h0));
  return worst;
}

TEST(Systems, GroundTruthConservesEnergyOverTenSeconds) {
  for (const auto& spec : {SystemSpec::chain(2), SystemSpec::spring(2)})
    for (std::uint64_t seed = 0; seed < 5; ++seed) EXPECT_LT(worst_relative_drift(spec, seed), 1e-6) << spec.name();
}

TEST(Systems, DampedEnergyIsNonIncreasing) {
  for (const auto& spec : {SystemSpec::chain(2, 0.1), SystemSpec::spring(2, 0.1)}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Eigen::VectorXd z0 = sample_initial_state(spec, seed);
      auto field = [&](const Eigen::VectorXd& z) { return true_dynamics(spec, z); };
      const auto traj = ode_solve(field, z0, time_grid(101, 0.1), ground_truth_integrator(0.1));
      for (std::size_t k = 1; k < traj.size(); ++k)
        EXPECT_LE(true_hamiltonian(spec, traj[k]), true_hamiltonian(spec, traj[k - 1]) + 1e-12);
      EXPECT_LT(true_hamiltonian(spec, traj.back()), true_hamiltonian(spec, z0));
    }
  }
}

TEST(Systems, RowHelpersRoundTrip) {
  Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(row_state(t, 1), Eigen::Vector3d(4, 5, 6));
  const Tensor doubled = map_rows(t, [](const StateVector& z) { return StateVector(2 * z); });
  EXPECT_EQ(doubled, Tensor::matrix(2, 3, {2, 4, 6, 8, 10, 12}));
}

}  // namespace
}  // namespace hnndecon
