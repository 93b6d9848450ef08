#include <cmath>

#include <gtest/gtest.h>

#include "cflow/errors.hpp"
#include "cflow/metrics.hpp"
#include "cflow/rng.hpp"

namespace cflow {
namespace {

Mask mask(std::initializer_list<int> bits) {
  Mask m(static_cast<Index>(bits.size()));
  Index i = 0;
  for (int b : bits) m(i++) = static_cast<std::uint8_t>(b);
  return m;
}

Mask random_mask(Rng& rng, Index n, double p) {
  Mask m(n);
  for (Index i = 0; i < n; ++i) m(i) = rng.bernoulli(p) ? 1 : 0;
  return m;
}

// Reference distance written against plain loops.
double brute_iou_distance(const Mask& a, const Mask& b) {
  int inter = 0;
  int uni = 0;
  for (Index i = 0; i < a.size(); ++i) {
    inter += (a(i) && b(i)) ? 1 : 0;
    uni += (a(i) || b(i)) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : 1.0 - static_cast<double>(inter) / uni;
}

double brute_ged(const MaskSet& r, const MaskSet& m) {
  auto mean_d = [](const MaskSet& a, const MaskSet& b) {
    double acc = 0.0;
    for (const Mask& x : a)
      for (const Mask& y : b) acc += brute_iou_distance(x, y);
    return acc / static_cast<double>(a.size() * b.size());
  };
  return 2.0 * mean_d(r, m) - mean_d(r, r) - mean_d(m, m);
}

TEST(Metrics, IouDistanceHandValues) {
  const Mask a = mask({1, 1, 1, 1, 0, 0});
  const Mask b = mask({0, 0, 1, 1, 1, 1});
  EXPECT_DOUBLE_EQ(iou_distance(a, b), 1.0 - 2.0 / 6.0);
  EXPECT_EQ(iou_distance(a, a), 0.0);
  const Mask empty = mask({0, 0, 0, 0, 0, 0});
  EXPECT_EQ(iou_distance(empty, empty), 0.0);
  EXPECT_EQ(iou_distance(empty, a), 1.0);
  EXPECT_THROW(iou_distance(a, mask({1, 0})), DimensionError);
}

TEST(Metrics, DiceHandValues) {
  EXPECT_DOUBLE_EQ(dice(mask({1, 1, 0}), mask({0, 1, 1})), 0.5);
  EXPECT_EQ(dice(mask({0, 0}), mask({0, 0})), 1.0);
  EXPECT_EQ(dice(mask({1, 0}), mask({0, 0})), 0.0);
  EXPECT_EQ(dice(mask({1, 1}), mask({1, 1})), 1.0);
}

TEST(Metrics, GedMatchesBruteForcePairEnumeration) {
  Rng rng(17);
  double worst = 0.0;
  for (int rep = 0; rep < 300; ++rep) {
    const Index pixels = 1 + static_cast<Index>(rng.below(64));
    MaskSet r(1 + rng.below(16));
    MaskSet m(1 + rng.below(16));
    const double p = rng.uniform(0.0, 0.7);
    for (Mask& x : r) x = random_mask(rng, pixels, p);
    for (Mask& x : m) x = random_mask(rng, pixels, p);
    worst = std::max(worst, std::abs(ged_squared(r, m) - brute_ged(r, m)));
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(Metrics, GedOfASetWithItselfIsExactlyZero) {
  Rng rng(18);
  for (int rep = 0; rep < 200; ++rep) {
    MaskSet r(1 + rng.below(16));
    for (Mask& x : r) x = random_mask(rng, 37, rng.uniform(0.0, 0.8));
    EXPECT_EQ(ged_squared(r, r), 0.0);
  }
}

TEST(Metrics, GedHandValue) {
  // R = {a, b}, M = {a}: cross mean d = (0 + d)/2, self(R) = d/2, self(M) = 0.
  const Mask a = mask({1, 1, 0, 0});
  const Mask b = mask({0, 1, 1, 0});
  const double d = 1.0 - 1.0 / 3.0;
  EXPECT_NEAR(ged_squared({a, b}, {a}), 2.0 * (d / 2.0) - d / 2.0, 1e-15);
}

TEST(Metrics, GedRejectsEmptySets) {
  EXPECT_THROW(ged_squared({}, {mask({1})}), ContractError);
}

TEST(Metrics, LogMeanExpMatchesDirectFormula) {
  Eigen::VectorXd ll(4);
  ll << -1.0, -2.0, -0.5, -3.0;
  const double direct = std::log(ll.array().exp().mean());
  EXPECT_NEAR(log_mean_exp(ll).log_likelihood, direct, 1e-14);
  const Eigen::VectorXd big = ll.array() - 5000.0;
  EXPECT_NEAR(log_mean_exp(big).log_likelihood, direct - 5000.0, 1e-9);
  EXPECT_EQ(log_mean_exp(Eigen::VectorXd::Constant(5, -7.0)).std_error, 0.0);
}

TEST(Metrics, CllEstimateIsReproducibleAndConsistent) {
  Rng rng(19);
  ModelConfig c;
  c.image_height = 6;
  c.image_width = 6;
  c.latent_dim = 3;
  c.context_dim = 4;
  c.hidden = 12;
  c.flow_steps = 2;
  const ModelBundle bundle = ModelBundle::create(c, rng);
  Image x(c.pixels());
  for (Index i = 0; i < x.size(); ++i) x(i) = rng.uniform();
  const Mask s = random_mask(rng, c.pixels(), 0.3);

  EXPECT_EQ(estimate_cll(bundle, x, s, 128, 5), estimate_cll(bundle, x, s, 128, 5));
  const CllEstimate reference = estimate_cll_detailed(bundle, x, s, 200000, 99);
  const CllEstimate small = estimate_cll_detailed(bundle, x, s, 128, 6);
  EXPECT_LT(reference.std_error, 1e-2);
  EXPECT_NEAR(small.log_likelihood, reference.log_likelihood, 5.0 * small.std_error + 5.0 * reference.std_error);
}

}  // namespace
}  // namespace cflow
