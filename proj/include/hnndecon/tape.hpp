#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A Tape is a Wengert list: nodes are appended in evaluation order, so the
// append order is already a topological order and a backward sweep is a
// single reverse scan. Every backward rule is written once, generically over
// the adjoint type: with Tensor adjoints the sweep is a plain numeric pass,
// with Var adjoints the sweep records itself onto the same tape, which makes
// the resulting gradients differentiable again (Hessian-vector products,
// Jacobians inside a training loss).

#include "hnndecon/tensor.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <span>

namespace hnndecon {

class Tape;

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Neg,
  Affine,
  Exp,
  Tanh,
  Abs,
  Sign,
  Sum,
  Expand,
  SumRows,
  BroadcastRows,
  AddRowvec,
  MatMul,
  Solve,
  Gather,
  Scatter,
  Reshape,
};

/// Handle to a value recorded on a tape. Cheap to copy; valid while the tape lives
/// and has not been cleared.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

struct NodeInfo {
  NodeInfo(Op o = Op::Leaf, int ia = -1, int ib = -1) : op(o), a(ia), b(ib) {}

  Op op = Op::Leaf;
  int a = -1;
  int b = -1;
  double scale = 0.0;
  bool flag_a = false;
  bool flag_b = false;
  ColumnMapPtr map;
};

// Tensor overloads so the generic backward rules resolve for both adjoint types.
using kernel::abs;
using kernel::add;
using kernel::add_rowvec;
using kernel::affine;
using kernel::broadcast_rows;
using kernel::exp;
using kernel::expand;
using kernel::matmul;
using kernel::mul;
using kernel::neg;
using kernel::sign;
using kernel::solve;
using kernel::sub;
using kernel::sum;
using kernel::sum_rows;
using kernel::tanh;

inline Tensor gather_cols(const Tensor& x, const ColumnMapPtr& map) { return kernel::gather_cols(x, *map); }
inline Tensor scatter_cols(const Tensor& x, const ColumnMapPtr& map, std::size_t width) {
  return kernel::scatter_cols(x, *map, width);
}
inline Tensor reshape(const Tensor& x, const Shape& shape) { return x.reshaped(shape); }

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A leaf that gradients may be taken with respect to.
  Var variable(Tensor value) { return record(NodeInfo{}, std::move(value)); }
  /// A leaf that is never differentiated; identical storage, distinct intent.
  Var constant(Tensor value) { return record(NodeInfo{}, std::move(value)); }

  Var record(NodeInfo info, Tensor value) {
    info_.push_back(std::move(info));
    values_.push_back(std::move(value));
    return Var(this, static_cast<int>(values_.size()) - 1);
  }

  const Tensor& value(int id) const { return values_.at(static_cast<std::size_t>(id)); }
  const NodeInfo& info(int id) const { return info_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return values_.size(); }

  void clear() {
    info_.clear();
    values_.clear();
  }

  /// Numeric vector-Jacobian product: returns sum_k seeds_k^T d outputs_k / d wrt_j
  /// for every j. Nothing is appended to the tape.
  std::vector<Tensor> gradients(std::span<const Var> outputs, std::span<const Tensor> seeds,
                                std::span<const Var> wrt);

  /// Gradient of a scalar output.
  std::vector<Tensor> gradients(const Var& output, std::span<const Var> wrt) {
    const Tensor seed(output.shape(), 1.0);
    return gradients(std::span<const Var>(&output, 1), std::span<const Tensor>(&seed, 1), wrt);
  }

  /// Like gradients() but the backward sweep is recorded, so the returned Vars can
  /// themselves be differentiated.
  std::vector<Var> grad(std::span<const Var> outputs, std::span<const Var> seeds, std::span<const Var> wrt);

  Var grad(const Var& output, const Var& seed, const Var& wrt) {
    return grad(std::span<const Var>(&output, 1), std::span<const Var>(&seed, 1),
                std::span<const Var>(&wrt, 1))
        .front();
  }

 private:
  template <class G>
  std::vector<G> sweep(std::span<const Var> outputs, std::vector<G> seeds, std::span<const Var> wrt,
                       bool release_consumed);

  template <class G, class ValueOf, class Want, class Emit>
  void propagate(int self, const G& g, ValueOf&& val, Want&& want, Emit&& emit);

  std::vector<NodeInfo> info_;
  std::vector<Tensor> values_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

namespace detail {

inline Tape* common_tape(const Var& a, const Var& b) {
  if (!a.valid() || !b.valid()) throw ContractError("operation on an unbound Var");
  if (a.tape() != b.tape()) throw ContractError("operands recorded on different tapes");
  return a.tape();
}

inline Tape* tape_of(const Var& a) {
  if (!a.valid()) throw ContractError("operation on an unbound Var");
  return a.tape();
}

}  // namespace detail

// ---- recorded operations --------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  Tape* t = detail::common_tape(a, b);
  return t->record({Op::Add, a.id(), b.id()}, kernel::add(a.value(), b.value()));
}

inline Var sub(const Var& a, const Var& b) {
  Tape* t = detail::common_tape(a, b);
  return t->record({Op::Sub, a.id(), b.id()}, kernel::sub(a.value(), b.value()));
}

inline Var mul(const Var& a, const Var& b) {
  Tape* t = detail::common_tape(a, b);
  return t->record({Op::Mul, a.id(), b.id()}, kernel::mul(a.value(), b.value()));
}

inline Var neg(const Var& a) {
  return detail::tape_of(a)->record({Op::Neg, a.id()}, kernel::neg(a.value()));
}

/// scale * a + shift, elementwise.
inline Var affine(const Var& a, double scale, double shift) {
  NodeInfo info{Op::Affine, a.id()};
  info.scale = scale;
  return detail::tape_of(a)->record(info, kernel::affine(a.value(), scale, shift));
}

inline Var exp(const Var& a) { return detail::tape_of(a)->record({Op::Exp, a.id()}, kernel::exp(a.value())); }
inline Var tanh(const Var& a) { return detail::tape_of(a)->record({Op::Tanh, a.id()}, kernel::tanh(a.value())); }
inline Var abs(const Var& a) { return detail::tape_of(a)->record({Op::Abs, a.id()}, kernel::abs(a.value())); }

/// Piecewise-constant; its derivative is taken to be zero everywhere.
inline Var sign(const Var& a) { return detail::tape_of(a)->record({Op::Sign, a.id()}, kernel::sign(a.value())); }

inline Var sum(const Var& a) { return detail::tape_of(a)->record({Op::Sum, a.id()}, kernel::sum(a.value())); }

/// Broadcasts a one-element tensor to `shape`.
inline Var expand(const Var& a, const Shape& shape) {
  return detail::tape_of(a)->record({Op::Expand, a.id()}, kernel::expand(a.value(), shape));
}

inline Var sum_rows(const Var& a) {
  if (a.value().rank() != 2) throw ShapeError("sum_rows expects a matrix, got " + shape_string(a.shape()));
  return detail::tape_of(a)->record({Op::SumRows, a.id()}, kernel::sum_rows(a.value()));
}

inline Var broadcast_rows(const Var& v, std::size_t rows) {
  return detail::tape_of(v)->record({Op::BroadcastRows, v.id()}, kernel::broadcast_rows(v.value(), rows));
}

/// x[r, :] + v for every row r of a matrix x.
inline Var add_rowvec(const Var& x, const Var& v) {
  if (x.value().rank() != 2) throw ShapeError("add_rowvec expects a matrix, got " + shape_string(x.shape()));
  Tape* t = detail::common_tape(x, v);
  return t->record({Op::AddRowvec, x.id(), v.id()}, kernel::add_rowvec(x.value(), v.value()));
}

inline Var matmul(const Var& a, const Var& b, bool ta = false, bool tb = false) {
  Tape* t = detail::common_tape(a, b);
  NodeInfo info{Op::MatMul, a.id(), b.id()};
  info.flag_a = ta;
  info.flag_b = tb;
  return t->record(info, kernel::matmul(a.value(), b.value(), ta, tb));
}

/// Batched solve op(M)^{-1} B with M: [b, d, d], B: [b, d, k].
inline Var solve(const Var& m, const Var& rhs, bool transpose = false) {
  Tape* t = detail::common_tape(m, rhs);
  NodeInfo info{Op::Solve, m.id(), rhs.id()};
  info.flag_a = transpose;
  return t->record(info, kernel::solve(m.value(), rhs.value(), transpose));
}

inline Var gather_cols(const Var& x, const ColumnMapPtr& map) {
  NodeInfo info{Op::Gather, x.id()};
  info.map = map;
  return detail::tape_of(x)->record(info, kernel::gather_cols(x.value(), *map));
}

inline Var scatter_cols(const Var& x, const ColumnMapPtr& map, std::size_t width) {
  NodeInfo info{Op::Scatter, x.id()};
  info.map = map;
  return detail::tape_of(x)->record(info, kernel::scatter_cols(x.value(), *map, width));
}

inline Var reshape(const Var& x, const Shape& shape) {
  return detail::tape_of(x)->record({Op::Reshape, x.id()}, x.value().reshaped(shape));
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(double s, const Var& a) { return affine(a, s, 0.0); }
inline Var operator*(const Var& a, double s) { return affine(a, s, 0.0); }

inline Var square(const Var& a) { return mul(a, a); }
inline Var mean(const Var& a) { return affine(sum(a), 1.0 / static_cast<double>(a.value().size()), 0.0); }

/// A constant on the same tape as `like`.
inline Var constant_like(const Var& like, Tensor value) { return detail::tape_of(like)->constant(std::move(value)); }

// ---- backward sweep ------------------------------------------------------

template <class G, class ValueOf, class Want, class Emit>
void Tape::propagate(int self, const G& g, ValueOf&& val, Want&& want, Emit&& emit) {
  // Copied: in recording mode the sweep appends to info_/values_.
  const NodeInfo n = info_[static_cast<std::size_t>(self)];
  switch (n.op) {
    case Op::Leaf:
    case Op::Sign:
      return;
    case Op::Add:
      if (want(n.a)) emit(n.a, G(g));
      if (want(n.b)) emit(n.b, G(g));
      return;
    case Op::Sub:
      if (want(n.a)) emit(n.a, G(g));
      if (want(n.b)) emit(n.b, neg(g));
      return;
    case Op::Mul:
      if (want(n.a)) emit(n.a, mul(g, val(n.b)));
      if (want(n.b)) emit(n.b, mul(g, val(n.a)));
      return;
    case Op::Neg:
      if (want(n.a)) emit(n.a, neg(g));
      return;
    case Op::Affine:
      if (want(n.a)) emit(n.a, affine(g, n.scale, 0.0));
      return;
    case Op::Exp:
      if (want(n.a)) emit(n.a, mul(g, val(self)));
      return;
    case Op::Tanh:
      if (want(n.a)) {
        const auto& y = val(self);
        emit(n.a, mul(g, affine(mul(y, y), -1.0, 1.0)));
      }
      return;
    case Op::Abs:
      if (want(n.a)) emit(n.a, mul(g, sign(val(n.a))));
      return;
    case Op::Sum:
      if (want(n.a)) emit(n.a, expand(g, values_[static_cast<std::size_t>(n.a)].shape()));
      return;
    case Op::Expand:
      if (want(n.a)) emit(n.a, sum(g));
      return;
    case Op::SumRows:
      if (want(n.a)) emit(n.a, broadcast_rows(g, values_[static_cast<std::size_t>(n.a)].rows()));
      return;
    case Op::BroadcastRows:
      if (want(n.a)) emit(n.a, sum_rows(g));
      return;
    case Op::AddRowvec:
      if (want(n.a)) emit(n.a, G(g));
      if (want(n.b)) emit(n.b, sum_rows(g));
      return;
    case Op::MatMul: {
      const bool ta = n.flag_a, tb = n.flag_b;
      if (want(n.a)) {
        emit(n.a, ta ? matmul(val(n.b), g, tb, true) : matmul(g, val(n.b), false, !tb));
      }
      if (want(n.b)) {
        emit(n.b, tb ? matmul(g, val(n.a), true, ta) : matmul(val(n.a), g, !ta, false));
      }
      return;
    }
    case Op::Solve: {
      if (!want(n.a) && !want(n.b)) return;
      const bool trans = n.flag_a;
      G g_rhs = solve(val(n.a), g, !trans);
      if (want(n.a)) {
        emit(n.a, trans ? neg(matmul(val(self), g_rhs, false, true)) : neg(matmul(g_rhs, val(self), false, true)));
      }
      if (want(n.b)) emit(n.b, std::move(g_rhs));
      return;
    }
    case Op::Gather:
      if (want(n.a)) emit(n.a, scatter_cols(g, n.map, values_[static_cast<std::size_t>(n.a)].cols()));
      return;
    case Op::Scatter:
      if (want(n.a)) emit(n.a, gather_cols(g, n.map));
      return;
    case Op::Reshape:
      if (want(n.a)) emit(n.a, reshape(g, values_[static_cast<std::size_t>(n.a)].shape()));
      return;
  }
}

template <class G>
std::vector<G> Tape::sweep(std::span<const Var> outputs, std::vector<G> seeds, std::span<const Var> wrt,
                           bool release_consumed) {
  if (outputs.size() != seeds.size()) throw ContractError("one seed is required per output");
  for (const Var& v : outputs)
    if (v.tape() != this) throw ContractError("output recorded on a different tape");
  for (const Var& v : wrt)
    if (v.tape() != this) throw ContractError("differentiation variable recorded on a different tape");

  int lo = std::numeric_limits<int>::max(), hi = -1;
  for (const Var& v : wrt) lo = std::min(lo, v.id());
  for (const Var& v : outputs) hi = std::max(hi, v.id());

  std::vector<std::optional<G>> adj(hi < 0 ? 0 : static_cast<std::size_t>(hi) + 1);
  std::vector<char> relevant(adj.size(), 0);
  std::vector<char> is_wrt(adj.size(), 0);
  for (const Var& v : wrt) {
    if (v.id() <= hi) {
      relevant[static_cast<std::size_t>(v.id())] = 1;
      is_wrt[static_cast<std::size_t>(v.id())] = 1;
    }
  }
  // A node matters iff it depends on some differentiation variable.
  for (int i = std::max(lo, 0); i <= hi; ++i) {
    const NodeInfo& n = info_[static_cast<std::size_t>(i)];
    if ((n.a >= 0 && relevant[static_cast<std::size_t>(n.a)]) || (n.b >= 0 && relevant[static_cast<std::size_t>(n.b)]))
      relevant[static_cast<std::size_t>(i)] = 1;
  }

  auto accumulate_into = [&](int id, G g) {
    auto& slot = adj[static_cast<std::size_t>(id)];
    if (!slot) {
      if (g.shape() != values_[static_cast<std::size_t>(id)].shape())
        throw ShapeError("seed/adjoint shape does not match its node");
      slot.emplace(std::move(g));
    } else if constexpr (std::is_same_v<G, Tensor>) {
      kernel::accumulate(*slot, g);
    } else {
      *slot = add(*slot, g);
    }
  };

  for (std::size_t k = 0; k < outputs.size(); ++k)
    if (relevant[static_cast<std::size_t>(outputs[k].id())]) accumulate_into(outputs[k].id(), std::move(seeds[k]));

  auto val = [this](int id) -> decltype(auto) {
    if constexpr (std::is_same_v<G, Tensor>) {
      return static_cast<const Tensor&>(values_[static_cast<std::size_t>(id)]);
    } else {
      return Var(this, id);
    }
  };
  auto want = [&](int id) { return id >= 0 && relevant[static_cast<std::size_t>(id)] != 0; };

  for (int i = hi; i >= std::max(lo, 0); --i) {
    auto& slot = adj[static_cast<std::size_t>(i)];
    if (!slot || !relevant[static_cast<std::size_t>(i)]) continue;
    const G& g = *slot;
    propagate(i, g, val, want, accumulate_into);
    if (release_consumed && !is_wrt[static_cast<std::size_t>(i)]) slot.reset();
  }

  std::vector<G> result;
  result.reserve(wrt.size());
  for (const Var& v : wrt) {
    const auto id = static_cast<std::size_t>(v.id());
    if (id < adj.size() && adj[id]) {
      result.push_back(*adj[id]);
    } else if constexpr (std::is_same_v<G, Tensor>) {
      result.emplace_back(values_[id].shape());
    } else {
      result.push_back(constant(Tensor(values_[id].shape())));
    }
  }
  return result;
}

inline std::vector<Tensor> Tape::gradients(std::span<const Var> outputs, std::span<const Tensor> seeds,
                                           std::span<const Var> wrt) {
  return sweep<Tensor>(outputs, std::vector<Tensor>(seeds.begin(), seeds.end()), wrt, true);
}

inline std::vector<Var> Tape::grad(std::span<const Var> outputs, std::span<const Var> seeds,
                                   std::span<const Var> wrt) {
  return sweep<Var>(outputs, std::vector<Var>(seeds.begin(), seeds.end()), wrt, false);
}

}  // namespace hnndecon
