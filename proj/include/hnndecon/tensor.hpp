#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hnndecon {

/// Raised when operand shapes are incompatible with an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a caller breaks an operation's documented precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor of doubles. A rank-0 tensor (empty shape) holds one value.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                       std::to_string(data_.size()) + " values");
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return Tensor(Shape{rows, cols}, std::vector<double>(values));
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor(Shape{values.size()}, std::vector<double>(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) throw ShapeError("axis out of range for " + shape_string(shape_));
    return shape_[axis];
  }

  /// Size of the last axis (1 for rank 0).
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  /// Product of all axes except the last.
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void release() {
    std::vector<double>().swap(data_);
    shape_.clear();
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Column selection with optional per-column weights, shared between a gather and its adjoint.
/// An index of -1 selects nothing (the output column is zero).
struct ColumnMap {
  std::vector<int> index;
  std::vector<double> weight;  // empty: all ones

  double w(std::size_t j) const { return weight.empty() ? 1.0 : weight[j]; }
};
using ColumnMapPtr = std::shared_ptr<const ColumnMap>;

inline ColumnMapPtr column_range(std::size_t begin, std::size_t end) {
  auto map = std::make_shared<ColumnMap>();
  for (std::size_t j = begin; j < end; ++j) map->index.push_back(static_cast<int>(j));
  return map;
}

inline ColumnMapPtr column_map(std::vector<int> index, std::vector<double> weight = {}) {
  if (!weight.empty() && weight.size() != index.size()) {
    throw ShapeError("column map weight count differs from index count");
  }
  return std::make_shared<ColumnMap>(ColumnMap{std::move(index), std::move(weight)});
}

namespace kernel {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <class Fn>
Tensor unary(const Tensor& a, Fn fn) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i]);
  return out;
}

template <class Fn>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fn fn) {
  require_same_shape(a, b, op);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i], b[i]);
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, "add", [](double x, double y) { return x + y; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, "sub", [](double x, double y) { return x - y; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, "mul", [](double x, double y) { return x * y; });
}
inline Tensor neg(const Tensor& a) {
  return unary(a, [](double x) { return -x; });
}
inline Tensor affine(const Tensor& a, double scale, double shift) {
  return unary(a, [=](double x) { return scale * x + shift; });
}
inline Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); });
}
inline Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); });
}
inline Tensor abs(const Tensor& a) {
  return unary(a, [](double x) { return std::abs(x); });
}
inline Tensor sign(const Tensor& a) {
  return unary(a, [](double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); });
}

inline void accumulate(Tensor& into, const Tensor& g) {
  require_same_shape(into, g, "accumulate");
  for (std::size_t i = 0; i < g.size(); ++i) into[i] += g[i];
}

inline Tensor sum(const Tensor& a) {
  return Tensor::scalar(std::accumulate(a.data().begin(), a.data().end(), 0.0));
}

inline Tensor expand(const Tensor& scalar, const Shape& shape) {
  return Tensor(shape, scalar.item());
}

/// Sums over every axis but the last: [r, c] -> [c].
inline Tensor sum_rows(const Tensor& a) {
  Tensor out(Shape{a.cols()});
  const std::size_t c = a.cols();
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t j = 0; j < c; ++j) out[j] += a[r * c + j];
  return out;
}

inline Tensor broadcast_rows(const Tensor& v, std::size_t rows) {
  if (v.rank() != 1) throw ShapeError("broadcast_rows expects a vector, got " + shape_string(v.shape()));
  Tensor out(Shape{rows, v.size()});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * v.size()));
  return out;
}

inline Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  if (v.rank() != 1 || x.cols() != v.size()) {
    throw ShapeError("add_rowvec: " + shape_string(x.shape()) + " + " + shape_string(v.shape()));
  }
  Tensor out = x;
  const std::size_t c = v.size();
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] += v[j];
  return out;
}

struct MatmulDims {
  std::size_t batch, m, k, n;
  bool batched;
};

inline MatmulDims matmul_dims(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  const bool batched = a.rank() == 3;
  if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3)) {
    throw ShapeError("matmul needs two rank-2 or two rank-3 operands, got " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()));
  }
  const std::size_t off = batched ? 1 : 0;
  const std::size_t batch = batched ? a.dim(0) : 1;
  if (batched && b.dim(0) != batch) throw ShapeError("matmul batch mismatch");
  const std::size_t ar = a.dim(off), ac = a.dim(off + 1);
  const std::size_t br = b.dim(off), bc = b.dim(off + 1);
  const std::size_t m = ta ? ac : ar, k = ta ? ar : ac;
  const std::size_t kb = tb ? bc : br, n = tb ? br : bc;
  if (k != kb) {
    throw ShapeError("matmul inner dimension mismatch: " + shape_string(a.shape()) +
                     (ta ? "^T" : "") + " x " + shape_string(b.shape()) + (tb ? "^T" : ""));
  }
  return {batch, m, k, n, batched};
}

/// op(A) * op(B) for matrices or batches of matrices (leading axis = batch).
inline Tensor matmul(const Tensor& a, const Tensor& b, bool ta = false, bool tb = false) {
  const MatmulDims d = matmul_dims(a, b, ta, tb);
  Tensor out(d.batched ? Shape{d.batch, d.m, d.n} : Shape{d.m, d.n});
  const std::size_t off = d.batched ? 1 : 0;
  const std::size_t ar = a.dim(off), ac = a.dim(off + 1), br = b.dim(off), bc = b.dim(off + 1);
  for (std::size_t s = 0; s < d.batch; ++s) {
    ConstMatMap A(a.data().data() + s * ar * ac, static_cast<Eigen::Index>(ar), static_cast<Eigen::Index>(ac));
    ConstMatMap B(b.data().data() + s * br * bc, static_cast<Eigen::Index>(br), static_cast<Eigen::Index>(bc));
    MatMap C(out.data().data() + s * d.m * d.n, static_cast<Eigen::Index>(d.m), static_cast<Eigen::Index>(d.n));
    if (!ta && !tb) C.noalias() = A * B;
    else if (ta && !tb) C.noalias() = A.transpose() * B;
    else if (!ta && tb) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
  return out;
}

/// Batched dense solve: X[s] = op(M[s])^{-1} B[s], M: [b, d, d], B: [b, d, k].
inline Tensor solve(const Tensor& m, const Tensor& rhs, bool transpose = false) {
  if (m.rank() != 3 || rhs.rank() != 3 || m.dim(1) != m.dim(2) || m.dim(0) != rhs.dim(0) ||
      rhs.dim(1) != m.dim(1)) {
    throw ShapeError("solve: incompatible shapes " + shape_string(m.shape()) + " and " +
                     shape_string(rhs.shape()));
  }
  const auto n = static_cast<Eigen::Index>(m.dim(1));
  const auto k = static_cast<Eigen::Index>(rhs.dim(2));
  Tensor out(rhs.shape());
  for (std::size_t s = 0; s < m.dim(0); ++s) {
    ConstMatMap M(m.data().data() + s * n * n, n, n);
    ConstMatMap B(rhs.data().data() + s * n * k, n, k);
    MatMap X(out.data().data() + s * n * k, n, k);
    if (transpose) X = M.transpose().partialPivLu().solve(B);
    else X = M.partialPivLu().solve(B);
  }
  return out;
}

/// out[..., j] = w_j * x[..., index_j]
inline Tensor gather_cols(const Tensor& x, const ColumnMap& map) {
  const std::size_t c = x.cols(), m = map.index.size();
  Shape shape = x.shape();
  if (shape.empty()) throw ShapeError("gather_cols on a scalar");
  shape.back() = m;
  Tensor out(shape);
  for (std::size_t j = 0; j < m; ++j) {
    if (map.index[j] >= static_cast<int>(c)) throw ShapeError("gather_cols index out of range");
  }
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < m; ++j)
      if (map.index[j] >= 0) out[r * m + j] = map.w(j) * x[r * c + static_cast<std::size_t>(map.index[j])];
  return out;
}

/// Adjoint of gather_cols: out[..., index_j] += w_j * x[..., j], out has `width` columns.
inline Tensor scatter_cols(const Tensor& x, const ColumnMap& map, std::size_t width) {
  const std::size_t m = map.index.size();
  if (x.cols() != m) throw ShapeError("scatter_cols: column count differs from map size");
  Shape shape = x.shape();
  shape.back() = width;
  Tensor out(shape);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < m; ++j)
      if (map.index[j] >= 0) out[r * width + static_cast<std::size_t>(map.index[j])] += map.w(j) * x[r * m + j];
  return out;
}

}  // namespace kernel

inline Tensor operator+(const Tensor& a, const Tensor& b) { return kernel::add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return kernel::sub(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return kernel::affine(a, s, 0.0); }

}  // namespace hnndecon
