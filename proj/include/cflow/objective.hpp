#ifndef CFLOW_OBJECTIVE_HPP
#define CFLOW_OBJECTIVE_HPP

#include "cflow/nets.hpp"

namespace cflow {

/// Bernoulli log-likelihood of binary masks s under per-pixel logits, summed
/// over pixels: sum s*l - softplus(l). Returns 1 x B. Throws ContractError if
/// s has entries other than 0 and 1.
Tensor recon_loglik(const Tensor& logits, const Tensor& s);

/// Per-example loss terms, each 1 x B.
struct LossTerms {
  Tensor total;       // recon + kl_mc
  Tensor recon;       // -log p(s | z_K, x)
  Tensor kl_mc;       // log q0(z0) - logdet_sum - log p(z_K | x)
  Tensor logdet_sum;  // sum_k log|det J_k|
};

/// Batch means of LossTerms.
struct LossBreakdown {
  double total = 0;
  double recon = 0;
  double kl_mc = 0;
  double logdet_sum = 0;
};

LossBreakdown summarize(const LossTerms& terms);

/// Single-sample estimate of the flow-posterior objective: z0 = mu + sigma*eps
/// from the encoder, (z_K, logdet) through the flow chain, decoded with x.
LossTerms cflow_loss(const BoundModel& model, const Tensor& x, const Tensor& s, const Tensor& eps);

/// Same estimator with the flow chain skipped (plain conditional VAE).
LossTerms cvae_loss(const BoundModel& model, const Tensor& x, const Tensor& s, const Tensor& eps);

}  // namespace cflow

#endif  // CFLOW_OBJECTIVE_HPP
