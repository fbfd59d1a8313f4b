#pragma once

#include "hnndecon/tape.hpp"

#include <cmath>
#include <map>
#include <random>
#include <string>

namespace hnndecon {

/// Flat, name-ordered store of learnable tensors.
using ParamStore = std::map<std::string, Tensor>;
/// The same store loaded onto a tape as differentiable leaves.
using BoundParams = std::map<std::string, Var>;

inline BoundParams bind_params(Tape& tape, const ParamStore& params) {
  BoundParams bound;
  for (const auto& [name, value] : params) bound.emplace(name, tape.variable(value));
  return bound;
}

template <class Store>
const auto& lookup(const Store& store, const std::string& name) {
  auto it = store.find(name);
  if (it == store.end()) throw ContractError("missing parameter '" + name + "'");
  return it->second;
}

enum class Activation { Tanh };

/// Layer widths of a fully connected network, stored in a ParamStore as
/// `<prefix>.w<k>` ([out, in]) and `<prefix>.b<k>` ([out]).
struct Mlp {
  std::string prefix;
  std::vector<std::size_t> widths;  // input, hidden..., output
  Activation activation = Activation::Tanh;

  std::size_t layers() const { return widths.size() - 1; }
  std::size_t in() const { return widths.front(); }
  std::size_t out() const { return widths.back(); }
  std::string weight(std::size_t k) const { return prefix + ".w" + std::to_string(k); }
  std::string bias(std::size_t k) const { return prefix + ".b" + std::to_string(k); }

  static Mlp make(std::string prefix, std::size_t in, std::size_t width, std::size_t depth, std::size_t out) {
    Mlp mlp{std::move(prefix), {in}};
    for (std::size_t i = 0; i < depth; ++i) mlp.widths.push_back(width);
    mlp.widths.push_back(out);
    return mlp;
  }
};

/// Glorot-uniform weights, zero biases.
inline void init_mlp(ParamStore& store, const Mlp& mlp, std::mt19937_64& rng) {
  if (mlp.widths.size() < 2) throw ContractError("an MLP needs at least an input and an output width");
  for (std::size_t k = 0; k < mlp.layers(); ++k) {
    const std::size_t fan_in = mlp.widths[k], fan_out = mlp.widths[k + 1];
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    Tensor w(Shape{fan_out, fan_in});
    for (double& v : w.storage()) v = dist(rng);
    store[mlp.weight(k)] = std::move(w);
    store[mlp.bias(k)] = Tensor(Shape{fan_out});
  }
}

namespace detail {

template <class T>
T activate(const T& x, Activation act) {
  switch (act) {
    case Activation::Tanh:
      return tanh(x);
  }
  return x;
}

inline void check_layer(const Tensor& w, const Tensor& b, std::size_t in, const std::string& name) {
  if (w.rank() != 2 || w.dim(1) != in || b.rank() != 1 || b.size() != w.dim(0)) {
    throw ShapeError("layer " + name + " with weight " + shape_string(w.shape()) + " and bias " +
                     shape_string(b.shape()) + " cannot take " + std::to_string(in) + " inputs");
  }
}

inline const Tensor& value_of(const Tensor& t) { return t; }
inline const Tensor& value_of(const Var& v) { return v.value(); }

}  // namespace detail

/// y = W_L act(... act(W_1 x + b_1) ...) + b_L for a batch x: [batch, in].
/// Works on plain tensors (ParamStore) or recorded values (BoundParams).
template <class Store, class T>
T mlp_forward(const Mlp& mlp, const Store& params, const T& x) {
  if (detail::value_of(x).rank() != 2) {
    throw ShapeError("mlp input must be [batch, in], got " + shape_string(detail::value_of(x).shape()));
  }
  T h = x;
  for (std::size_t k = 0; k < mlp.layers(); ++k) {
    const auto& w = lookup(params, mlp.weight(k));
    const auto& b = lookup(params, mlp.bias(k));
    detail::check_layer(detail::value_of(w), detail::value_of(b), detail::value_of(h).cols(), mlp.weight(k));
    h = add_rowvec(matmul(h, w, false, true), b);
    if (k + 1 < mlp.layers()) h = detail::activate(h, mlp.activation);
  }
  return h;
}

}  // namespace hnndecon
