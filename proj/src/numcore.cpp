#include "cflow/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace cflow {

namespace {

std::string shape_str(const Matrix& m) {
  return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

Tape& common_tape(const Tensor& a, const Tensor& b) {
  if (!a.valid() || !b.valid()) throw ContractError("operation on a detached tensor");
  if (a.tape() != b.tape()) throw ContractError("operands live on different tapes");
  return *a.tape();
}

Tape& tape_of(const Tensor& a) {
  if (!a.valid()) throw ContractError("operation on a detached tensor");
  return *a.tape();
}

// Sum `g` down to rows x cols, undoing a broadcast.
Matrix unbroadcast(const Matrix& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

Index broadcast_extent(Index a, Index b, const Matrix& ma, const Matrix& mb, const char* op) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  throw DimensionError(std::string(op) + ": shapes " + shape_str(ma) + " and " + shape_str(mb) +
                       " do not broadcast");
}

Matrix expand(const Matrix& m, Index rows, Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  return m.replicate(rows / m.rows(), cols / m.cols());
}

template <typename Fwd, typename Bwd>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
  Tape& tape = common_tape(a, b);
  const Matrix& va = a.value();
  const Matrix& vb = b.value();
  const Index rows = broadcast_extent(va.rows(), vb.rows(), va, vb, name);
  const Index cols = broadcast_extent(va.cols(), vb.cols(), va, vb, name);
  const Matrix ea = expand(va, rows, cols);
  const Matrix eb = expand(vb, rows, cols);
  Matrix out = fwd(ea, eb);
  return tape.record(std::move(out), {a, b}, [a, b, rows, cols, bwd](Tape& t, const Matrix& g) {
    const Matrix ea = expand(a.value(), rows, cols);
    const Matrix eb = expand(b.value(), rows, cols);
    Matrix ga;
    Matrix gb;
    bwd(ea, eb, g, ga, gb);
    t.accumulate(a, unbroadcast(ga, a.rows(), a.cols()));
    t.accumulate(b, unbroadcast(gb, b.rows(), b.cols()));
  });
}

int check_axis(int axis) {
  if (axis != 0 && axis != 1) throw DimensionError("reduction axis must be 0 or 1 for rank-2 tensors");
  return axis;
}

}  // namespace

// Tensor

const Matrix& Tensor::value() const {
  if (!valid()) throw ContractError("access to a detached tensor");
  return tape_->node(id_).value;
}

const Matrix& Tensor::grad() const {
  if (!valid()) throw ContractError("access to a detached tensor");
  const auto& n = tape_->node(id_);
  if (!tape_->consumed()) throw ContractError("gradient requested before backward");
  return n.grad;
}

bool Tensor::requires_grad() const { return valid() && tape_->node(id_).requires_grad; }

double Tensor::item() const {
  if (!is_scalar()) throw ContractError("item() on a non-scalar tensor");
  return value()(0, 0);
}

// Tape

void Tape::check_owned(const Tensor& t) const {
  if (t.tape() != this) throw ContractError("tensor belongs to a different tape");
}

Tensor Tape::variable(Matrix value) {
  if (consumed_) throw ContractError("recording on a consumed tape");
  Node n;
  n.grad = Matrix::Zero(value.rows(), value.cols());
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::constant(Matrix value) {
  if (consumed_) throw ContractError("recording on a consumed tape");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Tensor Tape::record(Matrix value, std::initializer_list<Tensor> parents, Backprop backprop) {
  return record(std::move(value), std::span<const Tensor>(parents.begin(), parents.size()),
                std::move(backprop));
}

Tensor Tape::record(Matrix value, std::span<const Tensor> parents, Backprop backprop) {
  if (consumed_) throw ContractError("recording on a consumed tape");
  bool needs = false;
  for (const Tensor& p : parents) {
    check_owned(p);
    needs = needs || node(p.id()).requires_grad;
  }
  Node n;
  if (needs) {
    n.grad = Matrix::Zero(value.rows(), value.cols());
    n.requires_grad = true;
    n.backprop = std::move(backprop);
  }
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

void Tape::accumulate(const Tensor& target, const Matrix& contribution) {
  Node& n = nodes_[target.id()];
  if (!n.requires_grad) return;
  n.grad += contribution;
}

void Tape::backward(const Tensor& loss) {
  check_owned(loss);
  if (consumed_) throw ContractError("backward called twice on one tape");
  if (!loss.is_scalar()) throw ContractError("backward requires a scalar loss");
  consumed_ = true;
  // Grads are zero-initialized at record time, so unreached nodes read as 0.
  Node& root = nodes_[loss.id()];
  if (!root.requires_grad) return;
  root.grad(0, 0) = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backprop) n.backprop(*this, n.grad);
  }
}

// Arithmetic

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& tape = common_tape(a, b);
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner extents differ " + shape_str(a.value()) + " * " + shape_str(b.value()));
  Matrix out = a.value() * b.value();
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  });
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](const Matrix& x, const Matrix& y) -> Matrix { return x + y; },
      [](const Matrix&, const Matrix&, const Matrix& g, Matrix& ga, Matrix& gb) {
        ga = g;
        gb = g;
      });
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](const Matrix& x, const Matrix& y) -> Matrix { return x - y; },
      [](const Matrix&, const Matrix&, const Matrix& g, Matrix& ga, Matrix& gb) {
        ga = g;
        gb = -g;
      });
}

Tensor operator*(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](const Matrix& x, const Matrix& y) -> Matrix { return x.cwiseProduct(y); },
      [](const Matrix& x, const Matrix& y, const Matrix& g, Matrix& ga, Matrix& gb) {
        ga = g.cwiseProduct(y);
        gb = g.cwiseProduct(x);
      });
}

Tensor operator/(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](const Matrix& x, const Matrix& y) -> Matrix { return x.cwiseQuotient(y); },
      [](const Matrix& x, const Matrix& y, const Matrix& g, Matrix& ga, Matrix& gb) {
        ga = g.cwiseQuotient(y);
        gb = -g.cwiseProduct(x).cwiseQuotient(y.cwiseProduct(y));
      });
}

Tensor operator-(const Tensor& a) {
  return tape_of(a).record(-a.value(), {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, -g); });
}

Tensor operator+(const Tensor& a, double b) { return a + tape_of(a).constant(b); }
Tensor operator+(double a, const Tensor& b) { return tape_of(b).constant(a) + b; }
Tensor operator-(const Tensor& a, double b) { return a - tape_of(a).constant(b); }
Tensor operator-(double a, const Tensor& b) { return tape_of(b).constant(a) - b; }
Tensor operator*(const Tensor& a, double b) { return a * tape_of(a).constant(b); }
Tensor operator*(double a, const Tensor& b) { return tape_of(b).constant(a) * b; }

Tensor exp(const Tensor& a) {
  Matrix out = a.value().array().exp().matrix();
  return tape_of(a).record(out, {a}, [a, out](Tape& t, const Matrix& g) { t.accumulate(a, g.cwiseProduct(out)); });
}

Tensor log(const Tensor& a) {
  if ((a.value().array() <= 0.0).any()) throw DomainError("log of a non-positive value");
  Matrix out = a.value().array().log().matrix();
  return tape_of(a).record(std::move(out), {a},
                           [a](Tape& t, const Matrix& g) { t.accumulate(a, g.cwiseQuotient(a.value())); });
}

Tensor tanh(const Tensor& a) {
  Matrix out = a.value().array().tanh().matrix();
  return tape_of(a).record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    t.accumulate(a, (g.array() * (1.0 - out.array().square())).matrix());
  });
}

namespace {

Eigen::ArrayXXd stable_sigmoid(const Eigen::ArrayXXd& x) {
  return x.unaryExpr([](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

}  // namespace

Tensor sigmoid(const Tensor& a) {
  Matrix out = stable_sigmoid(a.value().array()).matrix();
  return tape_of(a).record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    t.accumulate(a, (g.array() * out.array() * (1.0 - out.array())).matrix());
  });
}

Tensor softplus(const Tensor& a) {
  Matrix out = a.value().unaryExpr([](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); });
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (g.array() * stable_sigmoid(a.value().array())).matrix());
  });
}

Tensor abs(const Tensor& a) {
  Matrix out = a.value().cwiseAbs();
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (g.array() * a.value().array().sign()).matrix());
  });
}

Tensor square(const Tensor& a) {
  Matrix out = a.value().array().square().matrix();
  return tape_of(a).record(std::move(out), {a},
                           [a](Tape& t, const Matrix& g) { t.accumulate(a, 2.0 * g.cwiseProduct(a.value())); });
}

Tensor elementwise(UnaryOp op, const Tensor& a) {
  switch (op) {
    case UnaryOp::Neg: return -a;
    case UnaryOp::Exp: return exp(a);
    case UnaryOp::Log: return log(a);
    case UnaryOp::Tanh: return tanh(a);
    case UnaryOp::Sigmoid: return sigmoid(a);
    case UnaryOp::Softplus: return softplus(a);
    case UnaryOp::Abs: return abs(a);
  }
  throw ContractError("unknown unary op");
}

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  switch (op) {
    case BinaryOp::Add: return a + b;
    case BinaryOp::Sub: return a - b;
    case BinaryOp::Mul: return a * b;
  }
  throw ContractError("unknown binary op");
}

// Reductions

Tensor sum(const Tensor& a) {
  const Index rows = a.rows();
  const Index cols = a.cols();
  return tape_of(a).record(Matrix::Constant(1, 1, a.value().sum()), {a}, [a, rows, cols](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(rows, cols, g(0, 0)));
  });
}

Tensor sum(const Tensor& a, int axis) {
  check_axis(axis);
  const Index rows = a.rows();
  const Index cols = a.cols();
  Matrix out = axis == 0 ? Matrix(a.value().colwise().sum()) : Matrix(a.value().rowwise().sum());
  return tape_of(a).record(std::move(out), {a}, [a, rows, cols](Tape& t, const Matrix& g) {
    t.accumulate(a, expand(g, rows, cols));
  });
}

Tensor mean(const Tensor& a) { return sum(a) * (1.0 / static_cast<double>(a.value().size())); }

Tensor mean(const Tensor& a, int axis) {
  check_axis(axis);
  const double n = static_cast<double>(axis == 0 ? a.rows() : a.cols());
  return sum(a, axis) * (1.0 / n);
}

Tensor logsumexp(const Tensor& a) {
  const double m = a.value().maxCoeff();
  const double lse = m + std::log((a.value().array() - m).exp().sum());
  return tape_of(a).record(Matrix::Constant(1, 1, lse), {a}, [a, lse](Tape& t, const Matrix& g) {
    t.accumulate(a, (g(0, 0) * (a.value().array() - lse).exp()).matrix());
  });
}

Tensor logsumexp(const Tensor& a, int axis) {
  check_axis(axis);
  const Matrix& v = a.value();
  Matrix out;
  if (axis == 0) {
    const RowVector m = v.colwise().maxCoeff();
    out = (m.array() + (v.rowwise() - m).array().exp().colwise().sum().log()).matrix();
  } else {
    const Vector m = v.rowwise().maxCoeff();
    out = (m.array() + (v.colwise() - m).array().exp().rowwise().sum().log()).matrix();
  }
  const Index rows = a.rows();
  const Index cols = a.cols();
  return tape_of(a).record(out, {a}, [a, out, rows, cols](Tape& t, const Matrix& g) {
    const Matrix soft = (a.value().array() - expand(out, rows, cols).array()).exp().matrix();
    t.accumulate(a, soft.cwiseProduct(expand(g, rows, cols)));
  });
}

// Structure

Tensor slice_rows(const Tensor& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows())
    throw DimensionError("slice_rows: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") exceeds " + std::to_string(a.rows()) + " rows");
  Matrix out = a.value().middleRows(start, count);
  const Index rows = a.rows();
  const Index cols = a.cols();
  return tape_of(a).record(std::move(out), {a}, [a, start, count, rows, cols](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(rows, cols);
    full.middleRows(start, count) = g;
    t.accumulate(a, full);
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no operands");
  Tape& tape = tape_of(parts.front());
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Tensor& p : parts) {
    if (p.tape() != &tape) throw ContractError("operands live on different tapes");
    if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Tensor& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Tensor> kept(parts.begin(), parts.end());
  return tape.record(std::move(out), parts, [kept](Tape& t, const Matrix& g) {
    Index offset = 0;
    for (const Tensor& p : kept) {
      if (p.requires_grad()) t.accumulate(p, g.middleRows(offset, p.rows()));
      offset += p.rows();
    }
  });
}

Tensor concat_rows(std::initializer_list<Tensor> parts) {
  return concat_rows(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor batched_matvec(const Tensor& flat, const Tensor& z) {
  Tape& tape = common_tape(flat, z);
  const Index n = z.rows();
  const Index batch = z.cols();
  if (flat.rows() != n * n || flat.cols() != batch)
    throw DimensionError("batched_matvec: expected matrices " + std::to_string(n * n) + "x" + std::to_string(batch) +
                         ", got " + shape_str(flat.value()));
  Matrix out(n, batch);
  for (Index j = 0; j < batch; ++j) {
    const auto m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        flat.value().col(j).data(), n, n);
    out.col(j) = m * z.value().col(j);
  }
  return tape.record(std::move(out), {flat, z}, [flat, z, n, batch](Tape& t, const Matrix& g) {
    Matrix gflat = Matrix::Zero(n * n, batch);
    Matrix gz = Matrix::Zero(n, batch);
    for (Index j = 0; j < batch; ++j) {
      const auto m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          flat.value().col(j).data(), n, n);
      gz.col(j) = m.transpose() * g.col(j);
      // d/dM_{ik} = g_i z_k, stored row-major.
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(gflat.col(j).data(), n, n) =
          g.col(j) * z.value().col(j).transpose();
    }
    t.accumulate(flat, gflat);
    t.accumulate(z, gz);
  });
}

Tensor lu_logdet(const Tensor& a, int* sign) {
  const LogDet<double> ld = lu_logdet(a.value());
  if (sign != nullptr) *sign = ld.sign;
  return tape_of(a).record(Matrix::Constant(1, 1, ld.log_abs_det), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g(0, 0) * a.value().inverse().transpose());
  });
}

}  // namespace cflow
