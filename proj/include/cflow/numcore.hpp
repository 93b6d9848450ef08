#ifndef CFLOW_NUMCORE_HPP
#define CFLOW_NUMCORE_HPP

// Dense rank-2 tensors with tape-based reverse-mode differentiation.
//
// Every value is an Eigen::MatrixXd. Vectors are column matrices and a batch
// of vectors is stored one example per column, so a scalar is 1x1. Binary
// operations broadcast an operand along a dimension of extent 1 (scalars,
// per-row biases, per-column scalars); nothing more general is supported.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cflow/errors.hpp"

namespace cflow {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
/// lives.
class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  /// d(loss)/d(this) after Tape::backward. Zero if the loss did not depend on
  /// this tensor.
  const Matrix& grad() const;
  bool requires_grad() const;

  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }
  bool is_scalar() const { return rows() == 1 && cols() == 1; }
  double item() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Single-owner record of executed operations. Not copyable or movable since
/// tensors refer to it by address.
class Tape {
 public:
  /// Local derivative rule: receives d(loss)/d(output) and pushes
  /// contributions into the parents via accumulate().
  using Backprop = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable leaf.
  Tensor variable(Matrix value);
  Tensor constant(Matrix value);
  Tensor constant(double value);

  /// Record the result of a primitive. `backprop` is dropped when no parent
  /// requires a gradient.
  Tensor record(Matrix value, std::initializer_list<Tensor> parents, Backprop backprop);
  Tensor record(Matrix value, std::span<const Tensor> parents, Backprop backprop);

  /// Reverse sweep from a scalar loss. A tape supports exactly one sweep.
  void backward(const Tensor& loss);

  void accumulate(const Tensor& target, const Matrix& contribution);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Tensor;

  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backprop backprop;
  };

  const Node& node(std::size_t id) const { return nodes_[id]; }
  void check_owned(const Tensor& t) const;

  std::deque<Node> nodes_;
  bool consumed_ = false;
};

// Arithmetic

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);  // elementwise
Tensor operator/(const Tensor& a, const Tensor& b);  // elementwise
Tensor operator-(const Tensor& a);

Tensor operator+(const Tensor& a, double b);
Tensor operator+(double a, const Tensor& b);
Tensor operator-(const Tensor& a, double b);
Tensor operator-(double a, const Tensor& b);
Tensor operator*(const Tensor& a, double b);
Tensor operator*(double a, const Tensor& b);

Tensor exp(const Tensor& a);
/// Throws DomainError on any non-positive entry.
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// log(1 + e^x), evaluated without overflow.
Tensor softplus(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);

enum class UnaryOp { Neg, Exp, Log, Tanh, Sigmoid, Softplus, Abs };
enum class BinaryOp { Add, Sub, Mul };

Tensor elementwise(UnaryOp op, const Tensor& a);
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);

// Reductions. axis 0 collapses rows (result 1 x cols), axis 1 collapses
// columns (result rows x 1).

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, int axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int axis);
Tensor logsumexp(const Tensor& a);
Tensor logsumexp(const Tensor& a, int axis);

// Structure

Tensor slice_rows(const Tensor& a, Index start, Index count);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_rows(std::initializer_list<Tensor> parts);

/// Column-wise matrix-vector product. Column j of `flat` holds an n x n
/// matrix in row-major order; column j of the result is that matrix times
/// column j of `z`.
Tensor batched_matvec(const Tensor& flat, const Tensor& z);

// Determinants

template <typename Scalar>
struct LogDet {
  Scalar log_abs_det;
  int sign;
};

/// log|det a| and sign(det a) from an LU factorization with partial
/// pivoting. Throws SingularityError when a pivot magnitude is below 1e-12.
template <typename Derived>
LogDet<typename Derived::Scalar> lu_logdet(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  if (a.rows() != a.cols()) throw DimensionError("lu_logdet: matrix must be square");
  const Eigen::PartialPivLU<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> lu(a);
  const auto& packed = lu.matrixLU();
  Scalar log_abs = 0;
  int sign = lu.permutationP().determinant() > 0 ? 1 : -1;
  for (Index i = 0; i < packed.rows(); ++i) {
    const Scalar pivot = packed(i, i);
    if (std::abs(pivot) < Scalar(1e-12)) throw SingularityError("lu_logdet: matrix is numerically singular");
    if (pivot < 0) sign = -sign;
    log_abs += std::log(std::abs(pivot));
  }
  return {log_abs, sign};
}

/// Differentiable log|det a|; d/da = a^{-T}. `sign` receives sign(det a).
Tensor lu_logdet(const Tensor& a, int* sign = nullptr);

}  // namespace cflow

#endif  // CFLOW_NUMCORE_HPP
