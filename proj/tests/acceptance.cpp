// Acceptance gate: one PASS/FAIL line per criterion. Exits nonzero if any
// criterion fails that was not named with --known-failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cflow/metrics.hpp"
#include "cflow/objective.hpp"
#include "cflow/pipeline.hpp"
#include "cflow/verify.hpp"

namespace {

using namespace cflow;
using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool passed;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome suite_outcome(const verify::SuiteResult& r, double budget_seconds) {
  const bool ok = r.passed && r.seconds < budget_seconds;
  std::string d = fmt("worst %.3e (tol %.0e), %zu cases, %.1f s", r.worst, r.tolerance, r.cases, r.seconds);
  if (std::isfinite(budget_seconds)) d += fmt(" (budget %.0f s)", budget_seconds);
  if (!r.detail.empty()) d += "; " + r.detail;
  return {ok, d};
}

Outcome gradient_oracle() {
  const verify::SuiteResult r = verify::gradient_suite();
  Outcome o = suite_outcome(r, 180.0);
  o.passed = o.passed && r.cases >= 100;
  return o;
}

Outcome logdet_oracle() { return suite_outcome(verify::logdet_suite(100), 60.0); }

Outcome glow_roundtrip() { return suite_outcome(verify::roundtrip_suite(1000), HUGE_VAL); }

Outcome change_of_variables() { return suite_outcome(verify::change_of_variables_suite(), HUGE_VAL); }

Outcome objective_degeneracy() {
  Rng rng(50);
  ModelConfig c;
  c.flow_kind = FlowKind::Planar;
  c.flow_steps = 0;
  double worst_gap = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    const ModelBundle bundle = ModelBundle::create(c, rng);
    Tape t;
    const BoundModel m = bind(t, bundle, false);
    const Tensor x = t.constant(Matrix::NullaryExpr(c.pixels(), 16, [&] { return rng.uniform(); }));
    const Tensor s = t.constant(Matrix::NullaryExpr(c.pixels(), 16, [&] { return rng.bernoulli(0.3) ? 1.0 : 0.0; }));
    const Tensor eps = t.constant(rng.normal(c.latent_dim, 16));
    const Matrix a = cflow_loss(m, x, s, eps).total.value();
    const Matrix b = cvae_loss(m, x, s, eps).total.value();
    worst_gap = std::max(worst_gap, (a - b).cwiseAbs().maxCoeff());
  }

  // MC KL at 10^4 draws for a few (x, s) pairs against the closed form.
  const int n = 10000;
  double worst_z = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    const ModelBundle bundle = ModelBundle::create(c, rng);
    Tape t;
    const BoundModel m = bind(t, bundle, false);
    const Matrix x1 = Matrix::NullaryExpr(c.pixels(), 1, [&] { return rng.uniform(); });
    const Matrix s1 = Matrix::NullaryExpr(c.pixels(), 1, [&] { return rng.bernoulli(0.3) ? 1.0 : 0.0; });
    const Tensor x = t.constant(x1.replicate(1, n));
    const Tensor s = t.constant(s1.replicate(1, n));
    const Matrix kl = cflow_loss(m, x, s, t.constant(rng.normal(c.latent_dim, n))).kl_mc.value();
    const double mc = kl.mean();
    const double se = std::sqrt((kl.array() - mc).square().sum() / (n - 1) / n);
    const double exact = kl_diag(encode(m, x, s).base, prior(m, x)).value()(0, 0);
    worst_z = std::max(worst_z, std::abs(mc - exact) / se);
  }
  return {worst_gap <= 1e-12 && worst_z <= 3.0,
          fmt("max |cflow_loss - cvae_loss| = %.3e (tol 1e-12); worst |MC KL - closed form| = %.2f SE (tol 3)",
              worst_gap, worst_z)};
}

Outcome bound_consistency() {
  const auto t0 = Clock::now();
  GeneratorConfig g;
  g.seed = 60;
  const DatasetSplit data = generate(g);
  TrainConfig tc;
  tc.seed = 60;
  const TrainResult trained = train(tc, data);
  const ModelBundle& model = trained.best.model;

  const int n_elbo = 256;
  int ok = 0;
  double worst_margin = 1e300;
  for (std::uint32_t idx : data.test) {
    const MultiRaterSample& s = data.samples[idx];
    const CllEstimate cll = estimate_cll_detailed(model, s.image, s.raters.front(), 128, derive_seed(60, idx));
    Rng rng(derive_seed(61, idx));
    Tape t;
    const BoundModel m = bind(t, model, false);
    const Tensor x = t.constant(s.image.replicate(1, n_elbo));
    const Tensor y = t.constant(mask_to_vector(s.raters.front()).replicate(1, n_elbo));
    const Matrix elbo = -cflow_loss(m, x, y, t.constant(rng.normal(model.config.latent_dim, n_elbo))).total.value();
    const double elbo_mean = elbo.mean();
    const double elbo_se = std::sqrt((elbo.array() - elbo_mean).square().sum() / (n_elbo - 1) / n_elbo);
    const double se = std::hypot(cll.std_error, elbo_se);
    const double margin = (cll.log_likelihood - (elbo_mean - 3.0 * se));
    worst_margin = std::min(worst_margin, margin);
    ok += margin >= 0.0 ? 1 : 0;
  }
  const double frac = static_cast<double>(ok) / static_cast<double>(data.test.size());
  return {frac >= 0.95, fmt("CLL(128) >= ELBO - 3 SE on %d/%zu test images (%.1f%%, need 95%%), worst margin %.3f, "
                            "model trained %d epochs, %.0f s",
                            ok, data.test.size(), 100.0 * frac, worst_margin, trained.epochs_run, since(t0))};
}

double brute_ged(const MaskSet& r, const MaskSet& m) {
  auto d = [](const Mask& a, const Mask& b) {
    int inter = 0;
    int uni = 0;
    for (Index i = 0; i < a.size(); ++i) {
      inter += (a(i) && b(i)) ? 1 : 0;
      uni += (a(i) || b(i)) ? 1 : 0;
    }
    return uni == 0 ? 0.0 : 1.0 - static_cast<double>(inter) / uni;
  };
  auto mean_d = [&](const MaskSet& a, const MaskSet& b) {
    double acc = 0.0;
    for (const Mask& x : a)
      for (const Mask& y : b) acc += d(x, y);
    return acc / static_cast<double>(a.size() * b.size());
  };
  return 2.0 * mean_d(r, m) - mean_d(r, r) - mean_d(m, m);
}

Outcome ged_oracle() {
  Rng rng(70);
  double worst = 0.0;
  bool self_zero = true;
  int cases = 0;
  for (int rep = 0; rep < 1000; ++rep, ++cases) {
    const Index pixels = 1 + static_cast<Index>(rng.below(256));
    const double p = rng.uniform(0.0, 0.8);
    auto make = [&](std::size_t n) {
      MaskSet set(n);
      for (Mask& x : set) {
        x.resize(pixels);
        for (Index i = 0; i < pixels; ++i) x(i) = rng.bernoulli(p) ? 1 : 0;
      }
      return set;
    };
    const MaskSet r = make(1 + rng.below(16));
    const MaskSet m = make(1 + rng.below(16));
    worst = std::max(worst, std::abs(ged_squared(r, m) - brute_ged(r, m)));
    self_zero = self_zero && ged_squared(r, r) == 0.0;
  }
  return {worst <= 1e-12 && self_zero,
          fmt("max |streaming - brute force| = %.3e over %d random set pairs (tol 1e-12); ged(R,R) == 0 exactly: %s",
              worst, cases, self_zero ? "yes" : "no")};
}

Outcome trend() {
  const auto t0 = Clock::now();
  int ged_wins = 0;
  int cll_wins = 0;
  std::ostringstream rows;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const DatasetSplit data = generate(GeneratorConfig::bimodal(500, seed));
    MetricsReport flow;
    MetricsReport base;
    for (FlowKind kind : {FlowKind::Planar, FlowKind::None}) {
      TrainConfig tc;
      tc.seed = seed;
      tc.flow_kind = kind;
      tc.flow_steps = kind == FlowKind::None ? 0 : 4;
      const TrainResult r = train(tc, data);
      EvalConfig ec;
      ec.seed = seed;
      ec.model_id = kind == FlowKind::None ? "cvae" : "cflow-planar";
      (kind == FlowKind::None ? base : flow) = evaluate(r.best.model, data, ec);
    }
    ged_wins += flow.ged < base.ged ? 1 : 0;
    cll_wins += flow.neg_cll < base.neg_cll ? 1 : 0;
    rows << fmt("\n      seed %d: GED %.4f vs %.4f, -CLL %.3f vs %.3f", static_cast<int>(seed), flow.ged,
                base.ged, flow.neg_cll, base.neg_cll);
  }
  const double minutes = since(t0) / 60.0;
  return {ged_wins >= 4 && cll_wins >= 3 && minutes < 90.0,
          fmt("cFlow(planar, K=4) beats cVAE(K=0) on GED in %d/5 seeds (need 4), on -CLL in %d/5 (need 3), "
              "%.1f min (budget 90)",
              ged_wins, cll_wins, minutes) +
              rows.str()};
}

Outcome single_rater_diversity() {
  const auto t0 = Clock::now();
  const DatasetSplit data = generate(GeneratorConfig::bimodal(500, 80));
  std::vector<std::uint32_t> ambiguous;
  for (std::uint32_t idx : data.test)
    if (count_distinct(data.samples[idx].raters) >= 2) ambiguous.push_back(idx);

  auto diverse_fraction = [&](FlowKind kind) {
    TrainConfig tc;
    tc.seed = 80;
    tc.flow_kind = kind;
    tc.flow_steps = kind == FlowKind::None ? 0 : 4;
    tc.rater_mode = RaterMode::Single;
    const TrainResult r = train(tc, data);
    int diverse = 0;
    for (std::uint32_t idx : ambiguous)
      diverse += count_distinct(sample(r.best.model, data.samples[idx].image, 16, derive_seed(80, idx)).masks) >= 2;
    return static_cast<double>(diverse) / static_cast<double>(ambiguous.size());
  };
  const double flow = diverse_fraction(FlowKind::Planar);
  const double base = diverse_fraction(FlowKind::None);
  return {flow >= 0.5, fmt("cFlow single-rater: >= 2 distinct masks in 16 samples on %.1f%% of %zu ambiguous test "
                           "images (need 50%%); K=0 baseline: %.1f%%; %.0f s",
                           100.0 * flow, ambiguous.size(), 100.0 * base, since(t0))};
}

Outcome determinism() {
  const DatasetSplit data = generate(GeneratorConfig::bimodal(200, 90));
  TrainConfig tc;
  tc.seed = 90;
  tc.max_epochs = 10;
  tc.patience = 10;
  const TrainResult a = train(tc, data);
  const TrainResult b = train(tc, data);
  const bool same_ckpt = serialize(a.best) == serialize(b.best);
  EvalConfig ec;
  ec.seed = 90;
  const bool same_report =
      report_json(evaluate(a.best.model, data, ec)) == report_json(evaluate(b.best.model, data, ec));
  return {same_ckpt && same_report, fmt("checkpoints byte-identical: %s (%zu bytes); reports identical: %s",
                                        same_ckpt ? "yes" : "no", serialize(a.best).size(), same_report ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cflow acceptance criteria"};
  std::string report_path;
  std::vector<int> known_failures;
  std::vector<int> only;
  app.add_option("--report", report_path, "Also write the result lines to this file");
  app.add_option("--known-failure", known_failures,
                 "Criterion number whose failure is documented; it still prints FAIL but does not set the exit code");
  app.add_option("--only", only, "Run just these criteria");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient oracle", gradient_oracle},
      {"log-determinant oracle", logdet_oracle},
      {"glow invertibility", glow_roundtrip},
      {"change of variables", change_of_variables},
      {"objective degeneracy", objective_degeneracy},
      {"bound consistency", bound_consistency},
      {"GED oracle", ged_oracle},
      {"trend reproduction", trend},
      {"single-rater diversity", single_rater_diversity},
      {"determinism", determinism},
  };
  auto listed = [](const std::vector<int>& v, int n) { return std::find(v.begin(), v.end(), n) != v.end(); };

  std::ostringstream out;
  int passed = 0;
  int ran = 0;
  int blocking = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!only.empty() && !listed(only, number)) continue;
    const auto& [name, run] = criteria[i];
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    ++ran;
    passed += o.passed ? 1 : 0;
    const bool known = listed(known_failures, number);
    if (!o.passed && !known) ++blocking;
    std::string line = fmt("%s  criterion %d %s: ", o.passed ? "PASS" : "FAIL", number, name.c_str()) + o.detail;
    if (!o.passed && known) line += "\n      (known failure, documented in README)";
    std::cout << line << std::endl;
    out << line << '\n';
  }
  const std::string summary = fmt("%d of %d criteria passed", passed, ran);
  std::cout << summary << std::endl;
  out << summary << '\n';
  if (!report_path.empty()) std::ofstream(report_path) << out.str();
  return blocking == 0 ? 0 : 1;
}
