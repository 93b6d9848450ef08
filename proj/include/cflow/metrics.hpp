#ifndef CFLOW_METRICS_HPP
#define CFLOW_METRICS_HPP

#include <cstdint>
#include <vector>

#include "cflow/image.hpp"
#include "cflow/nets.hpp"

namespace cflow {

/// Non-empty collection of same-shape masks, read as an empirical
/// distribution.
using MaskSet = std::vector<Mask>;

/// 1 - |a & b| / |a | b|. Two empty masks are at distance 0.
double iou_distance(const Mask& a, const Mask& b);

/// 2|a & b| / (|a| + |b|). Two empty masks score 1.
double dice(const Mask& a, const Mask& b);

/// Squared generalized energy distance with ground distance 1 - IoU:
/// 2 E d(s, m) - E d(s, s') - E d(m, m'), expectations over all ordered
/// pairs including self-pairs.
double ged_squared(const MaskSet& raters, const MaskSet& samples);

struct CllEstimate {
  double log_likelihood;  // log p(s | x)
  double std_error;       // delta-method standard error of the estimate
};

/// Monte Carlo marginal likelihood: log (1/n) sum_n p(s | x, z_n) with z_n
/// drawn from the conditional prior, evaluated via logsumexp.
CllEstimate estimate_cll_detailed(const ModelBundle& bundle, const Image& x, const Mask& s, int n_samples,
                                  std::uint64_t seed);

double estimate_cll(const ModelBundle& bundle, const Image& x, const Mask& s, int n_samples = 128,
                    std::uint64_t seed = 0);

/// Same estimator given precomputed per-sample log-likelihoods.
CllEstimate log_mean_exp(const Eigen::VectorXd& log_likelihoods);

}  // namespace cflow

#endif  // CFLOW_METRICS_HPP
