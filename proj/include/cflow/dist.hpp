#ifndef CFLOW_DIST_HPP
#define CFLOW_DIST_HPP

#include "cflow/numcore.hpp"

namespace cflow {

/// N(mu, diag(exp(log_sigma))^2). Both members are L x B: one distribution
/// per column.
struct DiagGaussian {
  Tensor mu;
  Tensor log_sigma;

  Index dim() const { return mu.rows(); }
  Index batch() const { return mu.cols(); }
};

/// mu + exp(log_sigma) * eps. `eps` is supplied by the caller.
Tensor sample_reparam(const DiagGaussian& d, const Tensor& eps);

/// Log-density of each column of z; returns 1 x B.
Tensor log_prob(const DiagGaussian& d, const Tensor& z);

/// Closed-form KL(q || p) per column; returns 1 x B.
Tensor kl_diag(const DiagGaussian& q, const DiagGaussian& p);

}  // namespace cflow

#endif  // CFLOW_DIST_HPP
