#pragma once

#include "hnndecon/mlp.hpp"

namespace hnndecon {

/// ∇_z of a network with a single output, at one state z: [n].
inline Tensor grad_wrt_input(const Mlp& net, const ParamStore& params, const Tensor& z) {
  if (net.out() != 1) {
    throw ContractError("grad_wrt_input needs a scalar-output network, this one has " +
                        std::to_string(net.out()) + " outputs");
  }
  Tape tape;
  Var x = tape.variable(z.reshaped(Shape{1, z.size()}));
  const Var h = mlp_forward(net, bind_params(tape, params), x);
  return tape.gradients(h, std::span<const Var>(&x, 1)).front().reshaped(Shape{z.size()});
}

/// Batched Jacobian of a field f: [b, n] -> [b, n] at z, returned as [b, n, n] with
/// out[s, i, j] = dF_i/dz_j. Built from n recorded reverse sweeps, so the result is
/// itself differentiable with respect to anything f depends on.
template <class Field>
Var jacobian(Field&& f, const Var& z) {
  Tape& tape = *z.tape();
  const Var out = f(z);
  if (out.shape() != z.shape() || z.value().rank() != 2) {
    throw ShapeError("jacobian expects a field [b, n] -> [b, n], got " + shape_string(z.shape()) + " -> " +
                     shape_string(out.shape()));
  }
  const std::size_t b = z.value().dim(0), n = z.value().dim(1);
  Var flat;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor seed(Shape{b, n});
    for (std::size_t s = 0; s < b; ++s) seed.at(s, i) = 1.0;
    const Var row = tape.grad(out, tape.constant(std::move(seed)), z);
    const Var placed = scatter_cols(row, column_range(i * n, (i + 1) * n), n * n);
    flat = flat.valid() ? add(flat, placed) : placed;
  }
  return reshape(flat, Shape{b, n, n});
}

/// Jacobian at a single state z: [n] -> [n, n].
template <class Field>
Tensor jacobian(Field&& f, const Tensor& z) {
  Tape tape;
  const Var x = tape.variable(z.reshaped(Shape{1, z.size()}));
  return jacobian(std::forward<Field>(f), x).value().reshaped(Shape{z.size(), z.size()});
}

}  // namespace hnndecon
