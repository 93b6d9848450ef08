#include "cflow/metrics.hpp"

#include <cmath>

#include "cflow/objective.hpp"

namespace cflow {

namespace {

void check_pair(const Mask& a, const Mask& b) {
  if (a.size() != b.size()) throw DimensionError("mask shapes differ");
}

void check_set(const MaskSet& set, const char* what) {
  if (set.empty()) throw ContractError(std::string(what) + " mask set is empty");
  for (const Mask& m : set)
    if (m.size() != set.front().size()) throw DimensionError(std::string(what) + " masks differ in shape");
}

}  // namespace

double iou_distance(const Mask& a, const Mask& b) {
  check_pair(a, b);
  const auto inter = ((a != 0) && (b != 0)).count();
  const auto uni = ((a != 0) || (b != 0)).count();
  if (uni == 0) return 0.0;
  return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

double dice(const Mask& a, const Mask& b) {
  check_pair(a, b);
  const auto inter = ((a != 0) && (b != 0)).count();
  const auto total = (a != 0).count() + (b != 0).count();
  if (total == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

double ged_squared(const MaskSet& raters, const MaskSet& samples) {
  check_set(raters, "rater");
  check_set(samples, "sample");
  if (raters.front().size() != samples.front().size()) throw DimensionError("rater and sample masks differ in shape");

  // Distances are summed in 2^-62 fixed point, so every sum is exact and
  // independent of order; ged_squared(R, R) is then exactly zero.
  constexpr double kScale = 0x1p62;
  auto fixed = [](double d) { return static_cast<__int128>(std::llround(d * kScale)); };

  __int128 cross = 0;
  for (const Mask& r : raters)
    for (const Mask& m : samples) cross += fixed(iou_distance(r, m));

  // Mean over ordered pairs; d is symmetric with d(a, a) = 0.
  auto self_mean = [&](const MaskSet& set) {
    __int128 acc = 0;
    for (std::size_t i = 0; i < set.size(); ++i)
      for (std::size_t j = i + 1; j < set.size(); ++j) acc += fixed(iou_distance(set[i], set[j]));
    const double n = static_cast<double>(set.size());
    return static_cast<double>(2 * acc) / (n * n);
  };

  const double n_cross = static_cast<double>(raters.size()) * static_cast<double>(samples.size());
  return (2.0 * static_cast<double>(cross) / n_cross - self_mean(raters) - self_mean(samples)) / kScale;
}

CllEstimate log_mean_exp(const Eigen::VectorXd& ll) {
  if (ll.size() == 0) throw ContractError("log_mean_exp: no samples");
  const double n = static_cast<double>(ll.size());
  const double top = ll.maxCoeff();
  const Eigen::ArrayXd w = (ll.array() - top).exp();
  const double mean_w = w.mean();
  const double value = top + std::log(mean_w);
  double se = 0.0;
  if (ll.size() > 1) {
    const double var = (w - mean_w).square().sum() / (n - 1.0);
    se = std::sqrt(var / n) / mean_w;
  }
  return {value, se};
}

CllEstimate estimate_cll_detailed(const ModelBundle& bundle, const Image& x, const Mask& s, int n_samples,
                                  std::uint64_t seed) {
  if (n_samples < 1) throw ContractError("estimate_cll: need at least one sample");
  const Index n = n_samples;
  Rng rng(seed);
  Tape tape;
  const BoundModel model = bind(tape, bundle, false);
  const Tensor xs = tape.constant(x.replicate(1, n));
  const Tensor ss = tape.constant(mask_to_vector(s).replicate(1, n));
  const DiagGaussian p = prior(model, xs);
  const Tensor z = sample_reparam(p, tape.constant(rng.normal(bundle.config.latent_dim, n)));
  const Tensor ll = recon_loglik(decode(model, z, xs), ss);
  return log_mean_exp(ll.value().transpose());
}

double estimate_cll(const ModelBundle& bundle, const Image& x, const Mask& s, int n_samples, std::uint64_t seed) {
  return estimate_cll_detailed(bundle, x, s, n_samples, seed).log_likelihood;
}

}  // namespace cflow
