#include "cflow/verify.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include "cflow/dist.hpp"
#include "cflow/nets.hpp"
#include "cflow/objective.hpp"
#include "cflow/rng.hpp"

namespace cflow::verify {

Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double h) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (Index k = 0; k < x.size(); ++k) {
    const double orig = probe(k);
    probe(k) = orig + h;
    const double up = f(probe);
    probe(k) = orig - h;
    const double down = f(probe);
    probe(k) = orig;
    g(k) = (up - down) / (2.0 * h);
  }
  return g;
}

Matrix numeric_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double h) {
  const Vector y0 = f(x);
  Matrix jac(y0.size(), x.size());
  Vector probe = x;
  for (Index k = 0; k < x.size(); ++k) {
    const double orig = probe(k);
    auto at = [&](double offset) {
      probe(k) = orig + offset;
      Vector y = f(probe);
      probe(k) = orig;
      return y;
    };
    jac.col(k) = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
  }
  return jac;
}

double relative_error(const Matrix& a, const Matrix& b, double floor) {
  const double scale = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / scale;
}

GradCheck check_gradient(const Expression& expr, const std::vector<Matrix>& inputs, double h,
                         int max_coords_per_input, std::uint64_t seed) {
  Tape tape;
  std::vector<Tensor> vars;
  for (const Matrix& m : inputs) vars.push_back(tape.variable(m));
  const Tensor loss = expr(tape, vars);
  tape.backward(loss);

  auto evaluate = [&](const std::vector<Matrix>& values) {
    Tape t;
    std::vector<Tensor> cs;
    for (const Matrix& m : values) cs.push_back(t.constant(m));
    return expr(t, cs).item();
  };

  Rng rng(seed);
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<Matrix> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<Index> coords;
    const Index n = inputs[i].size();
    if (max_coords_per_input > 0 && n > max_coords_per_input) {
      for (int k = 0; k < max_coords_per_input; ++k) coords.push_back(static_cast<Index>(rng.below(n)));
    } else {
      for (Index k = 0; k < n; ++k) coords.push_back(k);
    }
    for (Index k : coords) {
      const double orig = probe[i](k);
      probe[i](k) = orig + h;
      const double up = evaluate(probe);
      probe[i](k) = orig - h;
      const double down = evaluate(probe);
      probe[i](k) = orig;
      numeric.push_back((up - down) / (2.0 * h));
      analytic.push_back(vars[i].grad()(k));
    }
  }
  const Eigen::Map<const Vector> a(analytic.data(), static_cast<Index>(analytic.size()));
  const Eigen::Map<const Vector> b(numeric.data(), static_cast<Index>(numeric.size()));
  return {relative_error(a, b), analytic.size()};
}

Matrix planar_inverse_numeric(const BasicPlanarStep<Tensor>& step, const Matrix& z_out, const Tensor& ctx) {
  const Index n = z_out.rows();
  const PlanarParams p = planar_params(mlp_forward(step.conditioner, ctx), n);
  const Matrix u_hat = planar_constrained_u(p.u, p.w).value();
  const Matrix& w = p.w.value();
  const Matrix& b = p.b.value();
  Matrix z(n, z_out.cols());
  for (Index j = 0; j < z_out.cols(); ++j) {
    const Index pj = w.cols() == 1 ? 0 : j;
    const double k = w.col(pj).dot(u_hat.col(pj));
    const double c = w.col(pj).dot(z_out.col(j)) + b(0, pj);
    // Solve a + k tanh(a) = c; the left side is strictly increasing.
    double lo = c - std::abs(k) - 1.0;
    double hi = c + std::abs(k) + 1.0;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::abs(c)); ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid + k * std::tanh(mid) < c) lo = mid;
      else hi = mid;
    }
    double a = 0.5 * (lo + hi);
    for (int it = 0; it < 3; ++it) {
      const double t = std::tanh(a);
      a -= (a + k * t - c) / (1.0 + k * (1.0 - t * t));
    }
    z.col(j) = z_out.col(j) - u_hat.col(pj) * std::tanh(a);
  }
  return z;
}

double trapezoid_2d(const Matrix& values, double h) {
  const Index rows = values.rows();
  const Index cols = values.cols();
  double total = 0.0;
  for (Index i = 0; i < rows; ++i) {
    const double wi = (i == 0 || i == rows - 1) ? 0.5 : 1.0;
    for (Index j = 0; j < cols; ++j) {
      const double wj = (j == 0 || j == cols - 1) ? 0.5 : 1.0;
      total += wi * wj * values(i, j);
    }
  }
  return total * h * h;
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Matrix random_matrix(Rng& rng, Index r, Index c, double scale = 1.0) { return rng.normal(r, c) * scale; }

struct Case {
  std::string name;
  Expression expr;
  std::vector<Matrix> inputs;
  int max_coords = 0;
};

// Weighted sum so that every output entry contributes a distinct gradient.
Tensor project(Tape& t, const Tensor& y, const Matrix& weights) { return sum(y * t.constant(weights)); }

std::vector<Matrix> mlp_inputs(const Mlp& m) {
  std::vector<Matrix> out;
  for_each_param(m, "", [&](const std::string&, const Matrix& p) { out.push_back(p); });
  return out;
}

BoundMlp mlp_from(std::span<const Tensor> in, std::size_t offset, std::size_t layers) {
  BoundMlp m;
  for (std::size_t l = 0; l < layers; ++l) {
    m.weights.push_back(in[offset + 2 * l]);
    m.biases.push_back(in[offset + 2 * l + 1]);
  }
  return m;
}

std::vector<Case> gradient_cases(Rng& rng) {
  std::vector<Case> cases;
  const Matrix r34 = random_matrix(rng, 3, 4);
  const Matrix r32 = random_matrix(rng, 3, 2);

  cases.push_back({"matmul", [r32](Tape& t, std::span<const Tensor> in) { return project(t, matmul(in[0], in[1]), r32); },
                   {random_matrix(rng, 3, 4), random_matrix(rng, 4, 2)}});
  cases.push_back({"add_broadcast_col",
                   [r34](Tape& t, std::span<const Tensor> in) { return project(t, in[0] + in[1], r34); },
                   {random_matrix(rng, 3, 4), random_matrix(rng, 3, 1)}});
  cases.push_back({"sub_broadcast_row",
                   [r34](Tape& t, std::span<const Tensor> in) { return project(t, in[0] - in[1], r34); },
                   {random_matrix(rng, 3, 4), random_matrix(rng, 1, 4)}});
  cases.push_back({"mul_scalar_broadcast",
                   [r34](Tape& t, std::span<const Tensor> in) { return project(t, in[0] * in[1], r34); },
                   {random_matrix(rng, 3, 4), random_matrix(rng, 1, 1)}});
  {
    Matrix denom = random_matrix(rng, 3, 4).array().abs().matrix().array() + 0.5;
    cases.push_back({"div", [r34](Tape& t, std::span<const Tensor> in) { return project(t, in[0] / in[1], r34); },
                     {random_matrix(rng, 3, 4), denom}});
  }
  cases.push_back({"neg", [r34](Tape& t, std::span<const Tensor> in) { return project(t, -in[0], r34); },
                   {random_matrix(rng, 3, 4)}});
  cases.push_back({"exp", [r34](Tape& t, std::span<const Tensor> in) { return project(t, exp(in[0]), r34); },
                   {random_matrix(rng, 3, 4)}});
  {
    Matrix positive = (random_matrix(rng, 3, 4).array().abs() + 0.5).matrix();
    cases.push_back({"log", [r34](Tape& t, std::span<const Tensor> in) { return project(t, log(in[0]), r34); },
                     {positive}});
  }
  cases.push_back({"tanh", [r34](Tape& t, std::span<const Tensor> in) { return project(t, tanh(in[0]), r34); },
                   {random_matrix(rng, 3, 4)}});
  cases.push_back({"sigmoid", [r34](Tape& t, std::span<const Tensor> in) { return project(t, sigmoid(in[0]), r34); },
                   {random_matrix(rng, 3, 4, 3.0)}});
  cases.push_back({"softplus",
                   [r34](Tape& t, std::span<const Tensor> in) { return project(t, softplus(in[0]), r34); },
                   {random_matrix(rng, 3, 4, 3.0)}});
  {
    Matrix away = random_matrix(rng, 3, 4);
    away = away.unaryExpr([](double v) { return v >= 0 ? v + 0.2 : v - 0.2; });
    cases.push_back({"abs", [r34](Tape& t, std::span<const Tensor> in) { return project(t, abs(in[0]), r34); },
                     {away}});
  }
  cases.push_back({"square", [r34](Tape& t, std::span<const Tensor> in) { return project(t, square(in[0]), r34); },
                   {random_matrix(rng, 3, 4)}});
  {
    const Matrix w_row = random_matrix(rng, 1, 4);
    const Matrix w_col = random_matrix(rng, 3, 1);
    cases.push_back({"sum_mean_axes",
                     [w_row, w_col](Tape& t, std::span<const Tensor> in) {
                       return project(t, sum(in[0], 0), w_row) + project(t, mean(in[0], 1), w_col) + mean(in[0]);
                     },
                     {random_matrix(rng, 3, 4)}});
    cases.push_back({"logsumexp",
                     [w_row, w_col](Tape& t, std::span<const Tensor> in) {
                       return project(t, logsumexp(in[0], 0), w_row) + project(t, logsumexp(in[0], 1), w_col) +
                              logsumexp(in[0]);
                     },
                     {random_matrix(rng, 3, 4, 2.0)}});
  }
  {
    const Matrix r54 = random_matrix(rng, 5, 4);
    const Matrix r24 = random_matrix(rng, 2, 4);
    cases.push_back({"slice_concat",
                     [r54, r24](Tape& t, std::span<const Tensor> in) {
                       return project(t, concat_rows({in[0], in[1]}), r54) + project(t, slice_rows(in[0], 1, 2), r24);
                     },
                     {random_matrix(rng, 3, 4), random_matrix(rng, 2, 4)}});
  }
  {
    const Matrix r33 = random_matrix(rng, 3, 3);
    cases.push_back({"batched_matvec",
                     [r33](Tape& t, std::span<const Tensor> in) { return project(t, batched_matvec(in[0], in[1]), r33); },
                     {random_matrix(rng, 9, 3), random_matrix(rng, 3, 3)}});
  }
  {
    Matrix a = random_matrix(rng, 4, 4) + 3.0 * Matrix::Identity(4, 4);
    cases.push_back({"lu_logdet", [](Tape&, std::span<const Tensor> in) { return lu_logdet(in[0]); }, {a}});
  }
  {
    const Matrix r32b = random_matrix(rng, 3, 2);
    cases.push_back({"sample_reparam",
                     [r32b](Tape& t, std::span<const Tensor> in) {
                       return project(t, sample_reparam({in[0], in[1]}, in[2]), r32b);
                     },
                     {random_matrix(rng, 3, 2), random_matrix(rng, 3, 2, 0.5), random_matrix(rng, 3, 2)}});
    const Matrix r12 = random_matrix(rng, 1, 2);
    cases.push_back({"log_prob",
                     [r12](Tape& t, std::span<const Tensor> in) {
                       return project(t, log_prob({in[0], in[1]}, in[2]), r12);
                     },
                     {random_matrix(rng, 3, 2), random_matrix(rng, 3, 2, 0.5), random_matrix(rng, 3, 2)}});
    cases.push_back({"kl_diag",
                     [r12](Tape& t, std::span<const Tensor> in) {
                       return project(t, kl_diag({in[0], in[1]}, {in[2], in[3]}), r12);
                     },
                     {random_matrix(rng, 3, 2), random_matrix(rng, 3, 2, 0.5), random_matrix(rng, 3, 2),
                      random_matrix(rng, 3, 2, 0.5)}});
  }
  {
    const Matrix logits_w = random_matrix(rng, 1, 2);
    Matrix s = (random_matrix(rng, 5, 2).array() > 0).cast<double>().matrix();
    cases.push_back({"recon_loglik",
                     [logits_w, s](Tape& t, std::span<const Tensor> in) {
                       return project(t, recon_loglik(in[0], t.constant(s)), logits_w);
                     },
                     {random_matrix(rng, 5, 2, 2.0)}});
  }
  {
    const Index l = 6;
    const Index h = 5;
    const PlanarStep step = make_planar_step(l, h, 8, rng);
    std::vector<Matrix> inputs{random_matrix(rng, l, 3), random_matrix(rng, h, 3)};
    for (const Matrix& m : mlp_inputs(step.conditioner)) inputs.push_back(m);
    const Matrix rz = random_matrix(rng, l, 3);
    const std::size_t layers = step.conditioner.depth();
    cases.push_back({"planar_forward",
                     [rz, layers](Tape& t, std::span<const Tensor> in) {
                       const BasicPlanarStep<Tensor> s{mlp_from(in, 2, layers)};
                       const FlowOutput out = planar_forward(s, in[0], in[1]);
                       return project(t, out.z, rz) + sum(out.logdet);
                     },
                     inputs});
  }
  {
    const Index l = 5;
    const Index h = 4;
    const GlowStep step = make_glow_step(l, h, 8, rng);
    std::vector<Matrix> inputs{random_matrix(rng, l, 2), random_matrix(rng, h, 2)};
    for (const Mlp* m : {&step.actnorm, &step.linear, &step.coupling})
      for (const Matrix& p : mlp_inputs(*m)) inputs.push_back(p);
    const Matrix rz = random_matrix(rng, l, 2);
    const std::size_t layers = step.actnorm.depth();
    cases.push_back({"glow_forward",
                     [rz, layers](Tape& t, std::span<const Tensor> in) {
                       const BasicGlowStep<Tensor> s{mlp_from(in, 2, layers), mlp_from(in, 2 + 2 * layers, layers),
                                                     mlp_from(in, 2 + 4 * layers, layers)};
                       const FlowOutput out = glow_forward(s, in[0], in[1]);
                       return project(t, out.z, rz) + sum(out.logdet);
                     },
                     inputs});
  }
  // End-to-end objective at toy dimensions, every parameter group.
  for (FlowKind kind : {FlowKind::None, FlowKind::Planar, FlowKind::Glow}) {
    ModelConfig mc;
    mc.image_height = 8;
    mc.image_width = 8;
    mc.latent_dim = kind == FlowKind::Glow ? 6 : 4;
    mc.context_dim = 6;
    mc.hidden = 12;
    mc.flow_kind = kind;
    mc.flow_steps = kind == FlowKind::None ? 0 : 2;
    const ModelBundle bundle = ModelBundle::create(mc, rng);
    const Index batch = 2;
    const Matrix x = (rng.normal(mc.pixels(), batch).array() * 0.3 + 0.5).matrix();
    const Matrix s = (rng.normal(mc.pixels(), batch).array() > 0).cast<double>().matrix();
    const Matrix eps = rng.normal(mc.latent_dim, batch);
    auto expr = [bundle, x, s, eps](Tape& t, std::span<const Tensor> in) {
      BoundModel model{&bundle.config, {}};
      std::size_t i = 0;
      model.nets = map_params(bundle.nets, [&](const Matrix&) { return in[i++]; });
      return mean(cflow_loss(model, t.constant(x), t.constant(s), t.constant(eps)).total);
    };
    cases.push_back({"cflow_loss_" + to_string(kind), expr, bundle.flat_params(), 6});
  }
  return cases;
}

}  // namespace

SuiteResult gradient_suite(int instances_per_op, std::uint64_t seed) {
  const auto start = Clock::now();
  SuiteResult r{"gradient", true, 0.0, 1e-4, 0, 0.0, ""};
  Rng rng(seed);
  std::string worst_case;
  for (int inst = 0; inst < instances_per_op; ++inst) {
    for (const Case& c : gradient_cases(rng)) {
      const GradCheck g = check_gradient(c.expr, c.inputs, 1e-5, c.max_coords, rng.next_u64());
      ++r.cases;
      if (!(g.rel_error <= r.worst)) {
        r.worst = g.rel_error;
        worst_case = c.name;
      }
    }
  }
  r.passed = r.worst < r.tolerance;
  r.detail = "worst op: " + worst_case;
  r.seconds = elapsed(start);
  return r;
}

SuiteResult logdet_suite(int cases, std::uint64_t seed) {
  const auto start = Clock::now();
  SuiteResult r{"logdet", true, 0.0, 1e-6, 0, 0.0, ""};
  Rng rng(seed);
  const Index l = 6;
  const Index h = 8;
  for (int c = 0; c < cases; ++c) {
    const FlowKind kind = c % 2 == 0 ? FlowKind::Planar : FlowKind::Glow;
    const Index steps = 1 + (c / 2) % 4;
    const FlowChain chain = make_flow_chain(kind, steps, l, h, 8, rng);
    const Vector ctx = rng.normal(h, 1);
    const Vector z = rng.normal(l, 1);

    auto forward = [&](const Vector& zin) -> Vector {
      Tape t;
      const BoundFlowChain bound = map_params(chain, [&](const Matrix& m) { return t.constant(m); });
      return chain_forward(bound, t.constant(zin), t.constant(ctx)).z.value();
    };
    Tape t;
    const BoundFlowChain bound = map_params(chain, [&](const Matrix& m) { return t.constant(m); });
    const double analytic = chain_forward(bound, t.constant(z), t.constant(ctx)).logdet.item();
    const Matrix jac = numeric_jacobian(forward, z);
    const double numeric = std::log(std::abs(jac.fullPivLu().determinant()));
    r.worst = std::max(r.worst, std::abs(analytic - numeric));
    ++r.cases;
  }
  r.passed = r.worst < r.tolerance;
  r.seconds = elapsed(start);
  return r;
}

SuiteResult roundtrip_suite(int latents, std::uint64_t seed) {
  const auto start = Clock::now();
  SuiteResult r{"glow_roundtrip", true, 0.0, 1e-9, 0, 0.0, ""};
  Rng rng(seed);
  const Index l = 6;
  const Index h = 8;
  const FlowChain chain = make_flow_chain(FlowKind::Glow, 4, l, h, 8, rng);
  const Matrix z = rng.normal(l, latents);
  const Matrix ctx = rng.normal(h, latents);
  Tape t;
  const BoundFlowChain bound = map_params(chain, [&](const Matrix& m) { return t.constant(m); });
  const Tensor c = t.constant(ctx);
  const Matrix out = chain_forward(bound, t.constant(z), c).z.value();
  const Matrix back = chain_inverse(bound, out, c);
  r.worst = (back - z).cwiseAbs().maxCoeff();
  r.cases = static_cast<std::size_t>(latents);
  r.passed = r.worst < r.tolerance;
  r.seconds = elapsed(start);
  return r;
}

SuiteResult change_of_variables_suite(std::uint64_t seed, double step) {
  const auto start = Clock::now();
  SuiteResult r{"change_of_variables", true, 0.0, 0.02, 0, 0.0, ""};
  Rng rng(seed);
  const Index l = 2;
  const Index h = 4;
  const FlowChain chain = make_flow_chain(FlowKind::Planar, 4, l, h, 8, rng);
  const Vector ctx = rng.normal(h, 1);

  const Index n = static_cast<Index>(std::lround(20.0 / step)) + 1;
  Matrix grid(l, n * n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) grid.col(i * n + j) << -10.0 + step * i, -10.0 + step * j;

  Tape t;
  const BoundFlowChain bound = map_params(chain, [&](const Matrix& m) { return t.constant(m); });
  const Tensor c = t.constant(ctx);
  Matrix z = grid;
  for (auto it = bound.planar.rbegin(); it != bound.planar.rend(); ++it) z = planar_inverse_numeric(*it, z, c);

  // log q(z_K) = log N(z_0) - sum_k log|det J_k|, evaluated at the recovered z_0.
  const FlowOutput fwd = chain_forward(bound, t.constant(z), c);
  const double reconstruction = (fwd.z.value() - grid).cwiseAbs().maxCoeff();
  const Eigen::ArrayXd log_base =
      (-0.5 * z.colwise().squaredNorm().array() - std::log(2.0 * std::numbers::pi)).transpose();
  const Eigen::ArrayXd density = (log_base - fwd.logdet.value().transpose().array()).exp();
  const Matrix values = Eigen::Map<const Matrix>(density.data(), n, n);
  const double mass = trapezoid_2d(values, step);

  r.worst = std::abs(mass - 1.0);
  r.cases = static_cast<std::size_t>(n * n);
  std::ostringstream os;
  os << "mass " << mass << ", inverse residual " << reconstruction << ", logdet range ["
     << fwd.logdet.value().minCoeff() << ", " << fwd.logdet.value().maxCoeff() << "]";
  r.detail = os.str();
  r.passed = r.worst < r.tolerance && reconstruction < 1e-8;
  r.seconds = elapsed(start);
  return r;
}

std::vector<SuiteResult> run_selfcheck() {
  return {gradient_suite(), logdet_suite(), roundtrip_suite(), change_of_variables_suite()};
}

}  // namespace cflow::verify
