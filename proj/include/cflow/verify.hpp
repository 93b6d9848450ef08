#ifndef CFLOW_VERIFY_HPP
#define CFLOW_VERIFY_HPP

// Numerical oracles used by the selfcheck command and the acceptance suite.
// None of these reuse the analytic derivative or log-determinant code they
// are meant to check.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cflow/flows.hpp"
#include "cflow/numcore.hpp"

namespace cflow::verify {

/// Central-difference gradient of a scalar function of one matrix.
Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double h = 1e-5);

/// Fourth-order central-difference Jacobian (rows: outputs, cols: inputs).
Matrix numeric_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double h = 2e-4);

/// |a - b| / max(|a|, |b|, floor), norm-wise.
double relative_error(const Matrix& a, const Matrix& b, double floor = 1e-8);

/// A scalar-valued expression of several matrices, rebuilt on demand.
using Expression = std::function<Tensor(Tape&, std::span<const Tensor>)>;

struct GradCheck {
  double rel_error = 0.0;
  std::size_t coordinates = 0;
};

/// Compares tape gradients of `expr` with central differences. When
/// `max_coords_per_input` is positive, only that many randomly chosen
/// coordinates of each input are differenced.
GradCheck check_gradient(const Expression& expr, const std::vector<Matrix>& inputs, double h = 1e-5,
                         int max_coords_per_input = 0, std::uint64_t seed = 0);

/// Numeric inverse of one planar step (scalar Newton solve along w).
Matrix planar_inverse_numeric(const BasicPlanarStep<Tensor>& step, const Matrix& z_out, const Tensor& ctx);

/// Trapezoid rule on a uniform 2-D grid of `values(i, j)` with spacing h.
double trapezoid_2d(const Matrix& values, double h);

struct SuiteResult {
  std::string name;
  bool passed = false;
  double worst = 0.0;      // worst observed error
  double tolerance = 0.0;
  std::size_t cases = 0;
  double seconds = 0.0;
  std::string detail;
};

/// Gradient oracle over the differentiable primitives, the distribution and
/// flow code, and the end-to-end objective. Tolerance 1e-4.
SuiteResult gradient_suite(int instances_per_op = 8, std::uint64_t seed = 1);

/// Analytic planar and Glow log-determinants against log|det| of numerically
/// differentiated Jacobians at L = 6, K <= 4. Tolerance 1e-6.
SuiteResult logdet_suite(int cases = 100, std::uint64_t seed = 2);

/// Glow chain forward-then-inverse. Tolerance 1e-9.
SuiteResult roundtrip_suite(int latents = 1000, std::uint64_t seed = 3);

/// A 2-D standard normal pushed through a random K = 4 planar chain
/// integrates to 1 on [-10, 10]^2 with grid step 0.05. Tolerance 0.02.
SuiteResult change_of_variables_suite(std::uint64_t seed = 4, double step = 0.05);

std::vector<SuiteResult> run_selfcheck();

}  // namespace cflow::verify

#endif  // CFLOW_VERIFY_HPP
