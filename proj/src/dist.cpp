#include "cflow/dist.hpp"

#include <cmath>
#include <numbers>

namespace cflow {

namespace {

void check_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError(std::string(what) + ": shape mismatch");
}

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

}  // namespace

Tensor sample_reparam(const DiagGaussian& d, const Tensor& eps) {
  check_same(d.mu, d.log_sigma, "sample_reparam");
  check_same(d.mu, eps, "sample_reparam");
  return d.mu + exp(d.log_sigma) * eps;
}

Tensor log_prob(const DiagGaussian& d, const Tensor& z) {
  check_same(d.mu, d.log_sigma, "log_prob");
  check_same(d.mu, z, "log_prob");
  const Tensor standardized = (z - d.mu) * exp(-d.log_sigma);
  const Tensor per_coord = -(d.log_sigma + 0.5 * square(standardized)) - kHalfLog2Pi;
  return sum(per_coord, 0);
}

Tensor kl_diag(const DiagGaussian& q, const DiagGaussian& p) {
  check_same(q.mu, p.mu, "kl_diag");
  check_same(q.log_sigma, p.log_sigma, "kl_diag");
  const Tensor inv_var_p = exp(-2.0 * p.log_sigma);
  const Tensor terms =
      (p.log_sigma - q.log_sigma) + 0.5 * (exp(2.0 * q.log_sigma) + square(q.mu - p.mu)) * inv_var_p - 0.5;
  return sum(terms, 0);
}

}  // namespace cflow
