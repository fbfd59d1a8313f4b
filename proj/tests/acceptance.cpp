// Acceptance run: exact property suites (criteria 1-5) and desk-scale reproductions (criteria 6-11).
// Prints one "criterion N: PASS|FAIL ..." line per criterion and exits nonzero if any fails.
//
// usage: hnndecon_acceptance [criterion ...]
//   HNNDECON_ACCEPT_CACHE=<dir>  reuse trained runs in <dir> instead of a fresh work directory
//   HNNDECON_ACCEPT_JOBS=<n>     parallel training runs (default: hardware threads)

#include "gradcheck.hpp"
#include "op_cases.hpp"
#include "hnndecon/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace {

using namespace hnndecon;
using testing::max_rel_error;
using testing::numeric_gradient;
using testing::numeric_jacobian;
using testing::random_tensor;
using testing::rel_error;

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[violated] ";
    }
    detail << what << "; ";
  }
};

std::string num(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

// ---- property suites -------------------------------------------------------

Verdict gradient_correctness() {
  Verdict v;
  std::mt19937_64 rng(101);
  double worst = 0.0;
  std::size_t instances = 0;

  for (const auto& c : testing::op_cases()) {
    for (int trial = 0; trial < 100; ++trial, ++instances) {
      const auto inputs = c.inputs(rng);
      const Tensor w = testing::weights_for(c, inputs, rng);
      const auto analytic = testing::analytic_gradient(c, inputs, w);
      const auto numeric =
          numeric_gradient([&](const auto& x) { return testing::forward_loss(c, x, w); }, inputs);
      for (std::size_t k = 0; k < inputs.size(); ++k) worst = std::max(worst, max_rel_error(analytic[k], numeric[k]));
    }
  }
  v.require(worst < 1e-4, "primitive gradients over " + std::to_string(instances) + " instances, worst rel err " + num(worst));

  // Second-order: gradients of recorded gradients (Hessian-vector products).
  worst = 0.0;
  instances = 0;
  for (const auto& c : testing::op_cases()) {
    for (int trial = 0; trial < 10; ++trial, ++instances) {
      const auto inputs = c.inputs(rng);
      const Tensor w = testing::weights_for(c, inputs, rng);
      std::vector<Tensor> probe;
      for (const Tensor& t : inputs) probe.push_back(random_tensor(t.shape(), rng));
      Tape tape;
      std::vector<Var> vars;
      for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
      const Var loss = sum(mul(tanh(c.apply(vars)), tape.constant(w)));
      const Var one = tape.constant(Tensor::scalar(1.0));
      const auto g = tape.grad(std::span<const Var>(&loss, 1), std::span<const Var>(&one, 1), vars);
      Var s = tape.constant(Tensor::scalar(0.0));
      for (std::size_t k = 0; k < g.size(); ++k) s = add(s, sum(mul(g[k], tape.constant(probe[k]))));
      const auto hvp = tape.gradients(s, vars);
      const auto numeric = numeric_gradient(
          [&](const auto& x) {
            const auto gx = testing::analytic_gradient(c, x, w);
            double acc = 0.0;
            for (std::size_t k = 0; k < gx.size(); ++k) acc += kernel::sum(kernel::mul(gx[k], probe[k])).item();
            return acc;
          },
          inputs);
      for (std::size_t k = 0; k < inputs.size(); ++k) worst = std::max(worst, max_rel_error(hvp[k], numeric[k], 1e-5));
    }
  }
  v.require(worst < 1e-4, "second-order over " + std::to_string(instances) + " instances, worst " + num(worst));

  // Input gradients of scalar nets.
  worst = 0.0;
  const Mlp scalar_net = Mlp::make("h", 3, 16, 2, 1);
  for (int trial = 0; trial < 100; ++trial) {
    ParamStore params;
    init_mlp(params, scalar_net, rng);
    const Tensor z = random_tensor({3}, rng);
    const Tensor g = grad_wrt_input(scalar_net, params, z);
    const auto numeric = numeric_gradient(
        [&](const auto& x) { return mlp_forward(scalar_net, params, x[0].reshaped(Shape{1, 3})).item(); }, {z});
    worst = std::max(worst, max_rel_error(g, numeric[0]));
  }
  v.require(worst < 1e-4, "input gradients over 100 nets, worst " + num(worst));

  // Parameter gradients of an MLP regression loss.
  worst = 0.0;
  const Mlp net = Mlp::make("f", 3, 6, 2, 2);
  for (int trial = 0; trial < 100; ++trial) {
    ParamStore params;
    init_mlp(params, net, rng);
    const Tensor x = random_tensor({4, 3}, rng), y = random_tensor({4, 2}, rng);
    auto loss_of = [&](const ParamStore& p) {
      const Tensor pred = mlp_forward(net, p, x);
      return kernel::sum(kernel::abs(kernel::sub(pred, y))).item() + kernel::sum(kernel::mul(pred, pred)).item();
    };
    Tape tape;
    const auto bound = bind_params(tape, params);
    const Var pred = mlp_forward(net, bound, tape.constant(x));
    const Var loss = add(sum(abs(sub(pred, tape.constant(y)))), sum(square(pred)));
    std::vector<Var> wrt;
    std::vector<std::string> names;
    for (const auto& [name, var] : bound) {
      wrt.push_back(var);
      names.push_back(name);
    }
    const auto g = tape.gradients(loss, wrt);
    for (std::size_t k = 0; k < names.size(); ++k) {
      for (std::size_t i = 0; i < params.at(names[k]).size(); ++i) {
        ParamStore shifted = params;
        shifted[names[k]][i] += 1e-5;
        const double up = loss_of(shifted);
        shifted[names[k]][i] -= 2e-5;
        worst = std::max(worst, rel_error(g[k][i], (up - loss_of(shifted)) / 2e-5));
      }
    }
  }
  v.require(worst < 1e-4, "parameter gradients over 100 nets, worst " + num(worst));

  // Jacobians of MLP fields.
  worst = 0.0;
  const Mlp field_net = Mlp::make("f", 4, 12, 2, 4);
  for (int trial = 0; trial < 100; ++trial) {
    ParamStore params;
    init_mlp(params, field_net, rng);
    const Tensor z = random_tensor({4}, rng);
    const Tensor jac = jacobian([&](const Var& s) { return mlp_forward(field_net, bind_params(*s.tape(), params), s); }, z);
    const Tensor numeric =
        numeric_jacobian([&](const Tensor& s) { return mlp_forward(field_net, params, s.reshaped(Shape{1, 4})); }, z);
    worst = std::max(worst, max_rel_error(jac, numeric));
  }
  v.require(worst < 1e-4, "field Jacobians over 100 nets, worst " + num(worst));
  return v;
}

ModelSpec property_model(Family f, std::size_t dim) {
  ModelSpec s;
  s.family = f;
  s.state_dim = dim;
  s.hidden_width = 16;
  return s;
}

// Initialization plus noise, so tanh curvature matters.
ParamStore random_params(const ModelSpec& spec, std::uint64_t seed) {
  ParamStore p = init_model(spec, seed);
  std::mt19937_64 rng(seed + 99);
  std::normal_distribution<double> n(0.0, 0.2);
  for (auto& [name, t] : p)
    for (double& x : t.storage()) x += n(rng);
  return p;
}

Verdict hnn_exactness() {
  Verdict v;
  std::mt19937_64 rng(202);
  double worst_dot = 0.0, worst_symp = 0.0;
  for (Family f : {Family::HNN_GENERAL, Family::HNN_SEPARABLE}) {
    for (int trial = 0; trial < 100; ++trial) {
      const auto spec = property_model(f, trial % 2 ? 4 : 8);
      const ParamStore p = random_params(spec, static_cast<std::uint64_t>(trial));
      const Tensor z = random_tensor({1, spec.state_dim}, rng, 0.7);
      const Tensor grad = evaluate(p, z, [&](const BoundParams& b, const Var& x) {
        return x.tape()->grad(learned_hamiltonian(spec, b, x), detail::batch_ones(x, 1), x);
      });
      const Tensor field = model_field(spec, p, z);
      double dot = 0.0;
      for (std::size_t i = 0; i < spec.state_dim; ++i) dot += grad[i] * field[i];
      worst_dot = std::max(worst_dot, std::abs(dot));
      for (double e : symplectic_errors(spec, p, z)) worst_symp = std::max(worst_symp, e);
    }
  }
  v.require(worst_dot < 1e-10, "max |grad H . F| over 200 (theta, z) " + num(worst_dot));
  v.require(worst_symp < 1e-8, "max symplectic error " + num(worst_symp));
  return v;
}

Verdict ground_truth_fidelity() {
  Verdict v;
  for (const auto& spec : {SystemSpec::chain(2), SystemSpec::spring(2)}) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Eigen::VectorXd z0 = sample_initial_state(spec, seed);
      auto field = [&](const Eigen::VectorXd& z) { return true_dynamics(spec, z); };
      const auto traj = ode_solve(field, z0, time_grid(101, 0.1), ground_truth_integrator(0.1));
      const double h0 = true_hamiltonian(spec, z0);
      for (const auto& z : traj) worst = std::max(worst, std::abs(true_hamiltonian(spec, z) - h0) / std::abs(h0));
    }
    v.require(worst < 1e-6, spec.name() + " relative drift over 10 s " + num(worst));
  }
  for (const auto& spec : {SystemSpec::chain(2, 0.1), SystemSpec::spring(2, 0.1)}) {
    double worst_rise = -std::numeric_limits<double>::infinity();
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Eigen::VectorXd z0 = sample_initial_state(spec, seed);
      auto field = [&](const Eigen::VectorXd& z) { return true_dynamics(spec, z); };
      const auto traj = ode_solve(field, z0, time_grid(101, 0.1), ground_truth_integrator(0.1));
      for (std::size_t k = 1; k < traj.size(); ++k)
        worst_rise = std::max(worst_rise, true_hamiltonian(spec, traj[k]) - true_hamiltonian(spec, traj[k - 1]));
    }
    v.require(worst_rise <= 1e-12, spec.name() + " damped, largest step-to-step energy change " + num(worst_rise));
  }
  return v;
}

Verdict averaged_velocity() {
  Verdict v;
  const double eps = std::numeric_limits<double>::epsilon();
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(-2, 2), hs(1e-3, 1.0);
  double worst_q = 0.0, worst_v = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double q0 = u(rng), v0 = u(rng), a = u(rng), h = hs(rng);
    const auto [q, vel] = averaged_velocity_step([a](double, double, int) { return a; }, q0, v0, 0, h);
    const double exact = q0 + h * v0 + 0.5 * h * h * a;
    worst_q = std::max(worst_q, std::abs(q - exact) / (eps * std::max(1.0, std::abs(exact))));
    worst_v = std::max(worst_v, std::abs(vel - (v0 + h * a)) / (eps * std::max(1.0, std::abs(vel))));
  }
  v.require(worst_q <= 4 && worst_v <= 2,
            "constant acceleration, worst error in ulps: q " + num(worst_q) + ", v " + num(worst_v));

  using Vec = Eigen::VectorXd;
  auto accel = [](const Vec& q, const Vec& vel, int) { return Vec(-q.array().sin() - 0.3 * vel.array()); };
  std::normal_distribution<double> n(0, 1);
  bool velocity_exact = true;
  double worst_trap = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Vec q0 = Eigen::Vector3d(n(rng), n(rng), n(rng)), v0 = Eigen::Vector3d(n(rng), n(rng), n(rng));
    const double h = hs(rng);
    const Vec v_euler = v0 + h * accel(q0, v0, 0);
    const Vec q_trap = q0 + 0.5 * h * (v0 + v_euler);
    const auto [q, vel] = averaged_velocity_step(accel, q0, v0, 0, h);
    velocity_exact = velocity_exact && vel == v_euler;
    worst_trap = std::max(worst_trap, (q - q_trap).cwiseAbs().maxCoeff() / std::max(1.0, q_trap.cwiseAbs().maxCoeff()));
  }
  v.require(velocity_exact, std::string("velocity update equals Euler bit for bit: ") + (velocity_exact ? "yes" : "no"));
  v.require(worst_trap <= 4 * eps, "position update vs trapezoid, worst rel " + num(worst_trap));
  return v;
}

Verdict separable_equivalence() {
  Verdict v;
  std::mt19937_64 rng(505);
  double worst = 0.0;
  std::size_t instances = 0;
  for (std::size_t dim : {2u, 4u, 8u}) {
    for (bool constant : {false, true}) {
      ModelSpec spec = property_model(Family::HNN_SEPARABLE, dim);
      spec.constant_mass = constant;
      for (int trial = 0; trial < 20; ++trial, ++instances) {
        const ParamStore p = random_params(spec, static_cast<std::uint64_t>(trial));
        const Tensor z = random_tensor({5, dim}, rng, 0.8);
        const Tensor structured = model_field(spec, p, z);
        const Tensor composite = evaluate(p, z, [&](const BoundParams& b, const Var& x) {
          return hamiltonian_field([&](const Var& s) { return separable_hamiltonian(spec, b, s); }, x);
        });
        worst = std::max(worst, max_rel_error(structured, composite, 1e-12));
      }
    }
  }
  v.require(worst < 1e-10, "structured vs composite field over " + std::to_string(instances) +
                               " parameter draws, worst rel err " + num(worst));
  return v;
}

// ---- empirical reproductions -------------------------------------------------

ExperimentConfig desk(const SystemSpec& sys, Family f, LossKind loss = LossKind::L2, double beta = 0.0) {
  ExperimentConfig c = base_config(sys, f, Scale::Desk);
  c.train.loss = loss;
  c.train.beta = beta;
  return c;
}

constexpr Family kStandard[] = {Family::NODE, Family::NODE_SO, Family::HNN_SEPARABLE};

std::vector<ExperimentConfig> set_standard(LossKind loss) {
  std::vector<ExperimentConfig> out;
  for (const auto& sys : {SystemSpec::chain(2), SystemSpec::spring(2)})
    for (Family f : kStandard) out.push_back(desk(sys, f, loss));
  return out;
}

std::vector<ExperimentConfig> set_symreg() {
  std::vector<ExperimentConfig> out;
  for (const auto& sys : {SystemSpec::chain(2), SystemSpec::spring(2)})
    for (double beta : symreg_betas()) out.push_back(desk(sys, Family::NODE, LossKind::L2, beta));
  return out;
}

std::vector<ExperimentConfig> set_friction() {
  std::vector<ExperimentConfig> out;
  for (Family f : {Family::NODE_SO, Family::HNN_FORCED, Family::HNN_SEPARABLE})
    out.push_back(desk(SystemSpec::chain(2, 0.1), f));
  return out;
}

/// Completed runs of one configuration group, one per seed.
struct Group {
  std::vector<RunSummary> runs;
  std::vector<TrajectorySummary> trajectories;

  std::vector<double> metric(const std::string& name) const {
    std::vector<double> out;
    for (const auto& r : runs) out.push_back(r.metric(name));
    return out;
  }
};

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double log_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += std::log(std::max(x, kMetricFloor));
  return s / static_cast<double>(v.size());
}

double log_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = log_mean(v);
  double s = 0.0;
  for (double x : v) s += std::pow(std::log(std::max(x, kMetricFloor)) - m, 2);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

class Experiments {
 public:
  Experiments(fs::path dir, std::size_t jobs) : dir_(std::move(dir)), jobs_(jobs) {}

  /// Trains (or reuses) every seed of every config and returns their groups in order.
  std::vector<Group> run(const std::vector<ExperimentConfig>& configs) {
    std::vector<ExperimentConfig> members;
    for (const auto& c : configs)
      for (std::uint64_t seed : c.seeds) members.push_back(c.with_seed(seed));
    const auto result = run_sweep(members, dir_, jobs_, [](const std::string& line) { std::cerr << line << '\n'; });
    if (result.failures() > 0) std::cerr << result.failures() << " runs failed or diverged\n";

    const auto trajectories = trajectories_from_table(read_csv(dir_ / "trajectories.csv"));
    std::map<std::string, const RunSummary*> by_id;
    for (const auto& r : result.report.runs) by_id[r.run_id] = &r;

    std::vector<Group> groups;
    std::size_t k = 0;
    for (const auto& c : configs) {
      Group g;
      for (std::size_t s = 0; s < c.seeds.size(); ++s, ++k) {
        const auto it = by_id.find(result.members[k].run_id);
        if (it == by_id.end()) continue;
        g.runs.push_back(*it->second);
        for (const auto& t : trajectories)
          if (t.run_id == it->second->run_id) g.trajectories.push_back(t);
      }
      groups.push_back(std::move(g));
    }
    return groups;
  }

 private:
  fs::path dir_;
  std::size_t jobs_;
};

bool complete(const std::vector<Group>& groups, std::size_t seeds, Verdict& v) {
  for (const auto& g : groups)
    if (g.runs.size() != seeds) {
      v.require(false, "a group finished " + std::to_string(g.runs.size()) + " of " + std::to_string(seeds) + " seeds");
      return false;
    }
  return true;
}

// Groups in set_standard order: chain {NODE, NODE_SO, HNN_SEP}, spring {NODE, NODE_SO, HNN_SEP}.
struct Standard {
  const Group& chain(std::size_t f) const { return groups[f]; }
  const Group& spring(std::size_t f) const { return groups[3 + f]; }
  std::vector<Group> groups;
};

Verdict second_order_bias(const Standard& l2, std::size_t seeds) {
  Verdict v;
  if (!complete(l2.groups, seeds, v)) return v;
  const double s_node = median(l2.spring(0).metric("rollout_error"));
  const double s_so = median(l2.spring(1).metric("rollout_error"));
  const double s_hnn = median(l2.spring(2).metric("rollout_error"));
  const double c_so = median(l2.chain(1).metric("rollout_error"));
  const double c_hnn = median(l2.chain(2).metric("rollout_error"));
  v.require(s_node / s_so >= 2.0, "spring NODE/NODE_SO " + num(s_node / s_so) + " >= 2");
  v.require(std::max(s_so, s_hnn) / std::min(s_so, s_hnn) <= 2.0,
            "spring NODE_SO " + num(s_so) + " vs HNN_SEPARABLE " + num(s_hnn) + " within 2x");
  v.require(c_hnn < c_so, "chain HNN_SEPARABLE " + num(c_hnn) + " < NODE_SO " + num(c_so));
  return v;
}

Verdict energy_rollout_coupling(const Standard& l2) {
  Verdict v;
  std::vector<double> x, y;
  std::vector<TrajectorySummary> pooled;
  for (const auto& g : l2.groups) {
    for (const auto& r : g.runs) {
      x.push_back(std::log(std::max(r.metric("rollout_error"), kMetricFloor)));
      y.push_back(std::log(std::max(r.metric("energy_error"), kMetricFloor)));
    }
    pooled.insert(pooled.end(), g.trajectories.begin(), g.trajectories.end());
  }
  if (x.size() < 12) {
    v.require(false, "only " + std::to_string(x.size()) + " runs, need 12");
    return v;
  }
  const double r = pearson(x, y);
  v.require(r >= 0.8, "Pearson over " + std::to_string(x.size()) + " runs " + num(r) + " >= 0.8");

  std::sort(pooled.begin(), pooled.end(),
            [](const auto& a, const auto& b) { return a.rollout_error < b.rollout_error; });
  std::size_t matched = 0;
  double worst = 1.0;
  for (std::size_t d = 0; d < 10; ++d) {
    const std::size_t lo = pooled.size() * d / 10, hi = pooled.size() * (d + 1) / 10;
    std::vector<double> hnn, other;
    for (std::size_t i = lo; i < hi; ++i)
      (is_hamiltonian(family_from_string(pooled[i].family)) ? hnn : other).push_back(pooled[i].energy_error);
    if (hnn.size() < 3 || other.size() < 3) continue;
    ++matched;
    const double ratio = geometric_mean(hnn) / geometric_mean(other);
    worst = std::max(worst, std::max(ratio, 1.0 / ratio));
  }
  v.require(matched > 0, std::to_string(matched) + " rollout-error deciles hold both HNN and NODE trajectories");
  v.require(worst < 2.0, "largest HNN/NODE energy-violation ratio within a decile " + num(worst) + " < 2");
  return v;
}

Verdict linear_energy_growth(const std::vector<const Group*>& conservative) {
  Verdict v;
  std::size_t n = 0, violated = 0, hnn = 0;
  double worst_ratio = 0.0, worst_r2 = 1.0;
  for (const Group* g : conservative) {
    for (const auto& r : g->runs) {
      ++n;
      if (r.metric("bound_violated") != 0.0) ++violated;
      worst_ratio = std::max(worst_ratio, r.metric("bound_ratio"));
      if (is_hamiltonian(family_from_string(r.family))) {
        ++hnn;
        const double r2 = r.metric("energy_growth_r2");
        worst_r2 = std::isfinite(r2) ? std::min(worst_r2, r2) : -1.0;
      }
    }
  }
  v.require(violated == 0, std::to_string(violated) + " of " + std::to_string(n) +
                               " runs exceed 1.5 t delta sup|grad H|, largest observed/bound " + num(worst_ratio));
  v.require(hnn > 0 && worst_r2 >= 0.8, "lowest linear-fit R^2 over " + std::to_string(hnn) + " HNN runs " + num(worst_r2));
  return v;
}

Verdict symplectic_null_result(const std::vector<Group>& sym, std::size_t seeds) {
  Verdict v;
  if (!complete(sym, seeds, v)) return v;
  const auto betas = symreg_betas();
  const char* systems[] = {"chain", "spring"};
  for (std::size_t s = 0; s < 2; ++s) {
    const Group* base = &sym[s * betas.size()];
    std::size_t best = 0;
    for (std::size_t b = 1; b < betas.size(); ++b)
      if (log_mean(sym[s * betas.size() + b].metric("rollout_error")) <
          log_mean(sym[s * betas.size() + best].metric("rollout_error")))
        best = b;
    const Group& g = sym[s * betas.size() + best];
    const double gain = log_mean(base->metric("rollout_error")) - log_mean(g.metric("rollout_error"));
    const double sd = std::sqrt(0.5 * (std::pow(log_sd(base->metric("rollout_error")), 2) +
                                       std::pow(log_sd(g.metric("rollout_error")), 2)));
    v.require(gain < sd, std::string(systems[s]) + " best beta " + num(betas[best]) + " log-gain " + num(gain) +
                             " < cross-seed log sd " + num(sd));

    std::vector<double> symp;
    for (std::size_t b = 0; b < betas.size(); ++b) {
      const auto e = sym[s * betas.size() + b].metric("symplectic_error");
      double m = 0.0;
      for (double x : e) m += x / static_cast<double>(e.size());
      symp.push_back(m);
    }
    bool monotone = true;
    std::string curve;
    for (std::size_t b = 0; b < symp.size(); ++b) {
      curve += (b ? " " : "") + num(symp[b]);
      if (b > 0 && symp[b] > symp[b - 1]) monotone = false;
    }
    v.require(monotone, std::string(systems[s]) + " mean symplectic error by beta [" + curve + "] non-increasing");
  }
  return v;
}

Verdict non_conservative(const std::vector<Group>& fr, std::size_t seeds) {
  Verdict v;
  if (!complete(fr, seeds, v)) return v;
  const double so = std::exp(log_mean(fr[0].metric("rollout_error")));
  const double forced = std::exp(log_mean(fr[1].metric("rollout_error")));
  const double sep = std::exp(log_mean(fr[2].metric("rollout_error")));
  v.require(std::max(so, forced) / std::min(so, forced) <= 1.5,
            "NODE_SO " + num(so) + " vs HNN_FORCED " + num(forced) + " within 1.5x");
  v.require(sep / so >= 2.0 && sep / forced >= 2.0,
            "HNN_SEPARABLE " + num(sep) + " at least 2x worse than both (" + num(sep / so) + ", " + num(sep / forced) + ")");
  return v;
}

std::vector<std::string> ranking(const Standard& s, bool spring) {
  std::vector<std::pair<double, std::string>> order;
  for (std::size_t f = 0; f < 3; ++f) {
    const Group& g = spring ? s.spring(f) : s.chain(f);
    order.emplace_back(median(g.metric("rollout_error")), to_string(kStandard[f]));
  }
  std::sort(order.begin(), order.end());
  std::vector<std::string> out;
  for (const auto& [e, name] : order) out.push_back(name);
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : " < ") + x;
  return s;
}

Verdict loss_swap(const Standard& l2, const Standard& l1, std::size_t seeds) {
  Verdict v;
  if (!complete(l2.groups, seeds, v) || !complete(l1.groups, seeds, v)) return v;
  for (bool spring : {false, true}) {
    const auto a = ranking(l2, spring), b = ranking(l1, spring);
    v.require(a == b, std::string(spring ? "spring" : "chain") + " L2 [" + join(a) + "] vs L1 [" + join(b) + "]");
  }
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  auto want = [&](int c) { return wanted.empty() || wanted.count(c) > 0; };

  int failures = 0;
  auto report = [&](int c, const Verdict& v) {
    std::cout << "criterion " << c << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail.str() << std::endl;
    if (!v.pass) ++failures;
  };
  auto guarded = [&](int c, auto&& fn) {
    if (!want(c)) return;
    try {
      report(c, fn());
    } catch (const std::exception& e) {
      Verdict v;
      v.require(false, std::string("exception: ") + e.what());
      report(c, v);
    }
  };

  guarded(1, gradient_correctness);
  guarded(2, hnn_exactness);
  guarded(3, ground_truth_fidelity);
  guarded(4, averaged_velocity);
  guarded(5, separable_equivalence);

  if (want(6) || want(7) || want(8) || want(9) || want(10) || want(11)) {
    fs::path dir;
    if (const char* cache = std::getenv("HNNDECON_ACCEPT_CACHE")) {
      dir = cache;
    } else {
      dir = fs::current_path() / "acceptance_runs";
      fs::remove_all(dir);
    }
    std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
    if (const char* j = std::getenv("HNNDECON_ACCEPT_JOBS")) jobs = std::max(1, std::atoi(j));
    const std::size_t seeds = scale_settings(Scale::Desk).n_seeds;
    std::cerr << "empirical runs in " << dir.string() << " with " << jobs << " jobs\n";
    Experiments ex(dir, jobs);

    try {
      Standard l2, l1;
      if (want(6) || want(7) || want(8) || want(11)) l2.groups = ex.run(set_standard(LossKind::L2));
      if (want(8) || want(11)) l1.groups = ex.run(set_standard(LossKind::L1));
      std::vector<Group> sym, fr;
      if (want(8) || want(9)) sym = ex.run(set_symreg());
      if (want(10)) fr = ex.run(set_friction());

      guarded(6, [&] { return second_order_bias(l2, seeds); });
      guarded(7, [&] { return energy_rollout_coupling(l2); });
      guarded(8, [&] {
        std::vector<const Group*> conservative;
        for (const auto* set : {&l2.groups, &l1.groups, &sym})
          for (const auto& g : *set) conservative.push_back(&g);
        return linear_energy_growth(conservative);
      });
      guarded(9, [&] { return symplectic_null_result(sym, seeds); });
      guarded(10, [&] { return non_conservative(fr, seeds); });
      guarded(11, [&] { return loss_swap(l2, l1, seeds); });
    } catch (const std::exception& e) {
      std::cout << "empirical runs aborted: " << e.what() << std::endl;
      ++failures;
    }
  }

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
