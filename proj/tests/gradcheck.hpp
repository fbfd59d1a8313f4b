#pragma once

// Finite-difference oracle for the tests. Deliberately touches nothing but
// Tensor storage: callers evaluate their function however they like and this
// header only perturbs inputs.

#include "hnndecon/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace hnndecon::testing {

inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_error(const Tensor& a, const Tensor& b, double floor = 1e-6) {
  if (a.size() != b.size()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_error(a[i], b[i], floor));
  return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

/// Central differences of a scalar function of several tensors.
using ScalarFn = std::function<double(const std::vector<Tensor>&)>;

inline std::vector<Tensor> numeric_gradient(const ScalarFn& f, std::vector<Tensor> inputs, double h = 1e-5) {
  std::vector<Tensor> grads;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor g(inputs[k].shape());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x = inputs[k][i];
      inputs[k][i] = x + h;
      const double up = f(inputs);
      inputs[k][i] = x - h;
      const double down = f(inputs);
      inputs[k][i] = x;
      g[i] = (up - down) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

/// Central differences of a vector function; column j holds dF/dz_j.
using VectorFn = std::function<Tensor(const Tensor&)>;

inline Tensor numeric_jacobian(const VectorFn& f, Tensor z, double h = 1e-5) {
  const std::size_t n = z.size();
  const std::size_t m = f(z).size();
  Tensor jac(Shape{m, n});
  for (std::size_t j = 0; j < n; ++j) {
    const double x = z[j];
    z[j] = x + h;
    const Tensor up = f(z);
    z[j] = x - h;
    const Tensor down = f(z);
    z[j] = x;
    for (std::size_t i = 0; i < m; ++i) jac.at(i, j) = (up[i] - down[i]) / (2.0 * h);
  }
  return jac;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = dist(rng);
  return t;
}

}  // namespace hnndecon::testing
