#include "cflow/flows.hpp"

#include <cmath>

namespace cflow {

std::string to_string(FlowKind kind) {
  switch (kind) {
    case FlowKind::None: return "none";
    case FlowKind::Planar: return "planar";
    case FlowKind::Glow: return "glow";
  }
  return "none";
}

FlowKind parse_flow_kind(const std::string& name) {
  if (name == "none") return FlowKind::None;
  if (name == "planar") return FlowKind::Planar;
  if (name == "glow") return FlowKind::Glow;
  throw ConfigError("unknown flow kind '" + name + "' (expected none, planar or glow)");
}

namespace {

// softplus(x + log(e - 1)) - 1: strictly increasing, > -1, and zero at zero.
const double kPlanarShift = std::log(std::exp(1.0) - 1.0);

struct LuMasks {
  Matrix strict_lower;
  Matrix strict_upper;
  Matrix diag;
  Matrix eye;
};

LuMasks lu_masks(Index n) {
  LuMasks m{Matrix::Zero(n * n, 1), Matrix::Zero(n * n, 1), Matrix::Zero(n * n, 1), Matrix::Zero(n * n, 1)};
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const Index k = i * n + j;
      if (i > j) m.strict_lower(k) = 1.0;
      if (i < j) m.strict_upper(k) = 1.0;
      if (i == j) {
        m.diag(k) = 1.0;
        m.eye(k) = 1.0;
      }
    }
  }
  return m;
}

// Dense (L_unit, U) for one column of raw factor entries.
std::pair<Matrix, Matrix> dense_factors(const Vector& raw, Index n) {
  Matrix lower = Matrix::Identity(n, n);
  Matrix upper = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const double v = raw(i * n + j);
      if (i > j) lower(i, j) = v;
      else if (i < j) upper(i, j) = v;
      else upper(i, i) = std::exp(v);
    }
  }
  return {lower, upper};
}

}  // namespace

// Planar

PlanarParams planar_params(const Tensor& conditioner_out, Index latent_dim) {
  if (conditioner_out.rows() != 2 * latent_dim + 1)
    throw DimensionError("planar conditioner must output 2L+1 rows");
  return {slice_rows(conditioner_out, 0, latent_dim), slice_rows(conditioner_out, latent_dim, latent_dim),
          slice_rows(conditioner_out, 2 * latent_dim, 1)};
}

Tensor planar_constrained_u(const Tensor& u, const Tensor& w) {
  const Tensor wu = sum(w * u, 0);
  const Tensor m = softplus(wu + kPlanarShift) - 1.0;
  return u + (m - wu) * w / sum(square(w), 0);
}

FlowOutput planar_apply(const PlanarParams& params, const Tensor& z) {
  if (params.u.rows() != z.rows() || params.w.rows() != z.rows())
    throw DimensionError("planar step: latent dimension mismatch");
  const Tensor u_hat = planar_constrained_u(params.u, params.w);
  const Tensor h = tanh(sum(params.w * z, 0) + params.b);
  const Tensor z_out = z + u_hat * h;
  // u_hat^T psi(z) = tanh'(a) * (w^T u_hat), with w^T u_hat > -1.
  Tensor logdet = log(1.0 + (1.0 - square(h)) * sum(params.w * u_hat, 0));
#ifdef CFLOW_INJECT_LOGDET_FAULT
  logdet = logdet + 1e-3;
#endif
  return {z_out, logdet};
}

FlowOutput planar_forward(const BasicPlanarStep<Tensor>& step, const Tensor& z, const Tensor& ctx) {
  return planar_apply(planar_params(mlp_forward(step.conditioner, ctx), z.rows()), z);
}

// Glow

std::pair<Tensor, Tensor> glow_lu_factors(const Tensor& raw, Index latent_dim) {
  if (raw.rows() != latent_dim * latent_dim) throw DimensionError("glow linear conditioner must output L*L rows");
  Tape& tape = *raw.tape();
  const LuMasks masks = lu_masks(latent_dim);
  const Tensor diag = tape.constant(masks.diag);
  const Tensor lower = raw * tape.constant(masks.strict_lower) + tape.constant(masks.eye);
  const Tensor upper = raw * tape.constant(masks.strict_upper) + exp(raw * diag) * diag;
  return {lower, upper};
}

FlowOutput glow_forward(const BasicGlowStep<Tensor>& step, const Tensor& z, const Tensor& ctx) {
  const Index n = z.rows();
  if (n < 2) throw DimensionError("glow step needs a latent dimension of at least 2");
  Tape& tape = *z.tape();

  // ActNorm.
  const Tensor act = mlp_forward(step.actnorm, ctx);
  const Tensor log_s = slice_rows(act, 0, n);
  const Tensor z1 = exp(log_s) * z + slice_rows(act, n, n);
  const Tensor ld_act = sum(log_s, 0);

  // Invertible linear map W = L_unit * U.
  const Tensor raw = mlp_forward(step.linear, ctx);
  const auto [lower, upper] = glow_lu_factors(raw, n);
  const Tensor z2 = batched_matvec(lower, batched_matvec(upper, z1));
  const Tensor ld_linear = sum(raw * tape.constant(lu_masks(n).diag), 0);

  // Affine coupling on z_a, conditioned on (z_b, c).
  const Index na = coupling_split(n);
  const Tensor za = slice_rows(z2, 0, na);
  const Tensor zb = slice_rows(z2, na, n - na);
  const Tensor coupling = mlp_forward(step.coupling, concat_rows({zb, ctx}));
  const Tensor log_r = slice_rows(coupling, 0, na);
  const Tensor za_out = exp(log_r) * za + slice_rows(coupling, na, na);
  const Tensor ld_coupling = sum(log_r, 0);

  return {concat_rows({za_out, zb}), ld_act + ld_linear + ld_coupling};
}

Matrix glow_inverse(const BasicGlowStep<Tensor>& step, const Matrix& z_out, const Tensor& ctx) {
  const Index n = z_out.rows();
  const Index batch = z_out.cols();
  if (ctx.cols() != batch) throw DimensionError("glow_inverse: batch mismatch between latent and context");
  Tape& tape = *ctx.tape();
  const Index na = coupling_split(n);

  const Matrix zb = z_out.bottomRows(n - na);
  const Matrix coupling = mlp_forward(step.coupling, concat_rows({tape.constant(zb), ctx})).value();
  Matrix z2(n, batch);
  z2.topRows(na) = (z_out.topRows(na) - coupling.bottomRows(na)).cwiseQuotient(coupling.topRows(na).array().exp().matrix());
  z2.bottomRows(n - na) = zb;

  const Matrix raw = mlp_forward(step.linear, ctx).value();
  Matrix z1(n, batch);
  for (Index j = 0; j < batch; ++j) {
    const auto [lower, upper] = dense_factors(raw.col(j), n);
    const Vector y = lower.triangularView<Eigen::UnitLower>().solve(z2.col(j));
    z1.col(j) = upper.triangularView<Eigen::Upper>().solve(y);
  }

  const Matrix act = mlp_forward(step.actnorm, ctx).value();
  return (z1 - act.bottomRows(n)).cwiseQuotient(act.topRows(n).array().exp().matrix());
}

Matrix glow_weight_matrix(const BasicGlowStep<Tensor>& step, const Tensor& ctx, Index col) {
  const Matrix raw = mlp_forward(step.linear, ctx).value();
  const Index n = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(raw.rows()))));
  const auto [lower, upper] = dense_factors(raw.col(col), n);
  return lower * upper;
}

// Construction

PlanarStep make_planar_step(Index latent_dim, Index context_dim, Index hidden, Rng& rng) {
  return {make_mlp({context_dim, hidden, hidden, 2 * latent_dim + 1}, rng)};
}

GlowStep make_glow_step(Index latent_dim, Index context_dim, Index hidden, Rng& rng) {
  const Index na = coupling_split(latent_dim);
  GlowStep s;
  s.actnorm = make_mlp({context_dim, hidden, hidden, 2 * latent_dim}, rng);
  s.linear = make_mlp({context_dim, hidden, hidden, latent_dim * latent_dim}, rng);
  s.coupling = make_mlp({latent_dim - na + context_dim, hidden, hidden, 2 * na}, rng);
  return s;
}

FlowChain make_flow_chain(FlowKind kind, Index steps, Index latent_dim, Index context_dim, Index hidden, Rng& rng) {
  if (steps < 0) throw ConfigError("number of flow steps must be non-negative");
  if (kind == FlowKind::None && steps != 0) throw ConfigError("flow kind 'none' requires K = 0");
  if (kind == FlowKind::Glow && latent_dim < 2) throw ConfigError("glow steps need L >= 2");
  FlowChain chain;
  chain.kind = kind;
  for (Index k = 0; k < steps; ++k) {
    if (kind == FlowKind::Planar) chain.planar.push_back(make_planar_step(latent_dim, context_dim, hidden, rng));
    if (kind == FlowKind::Glow) chain.glow.push_back(make_glow_step(latent_dim, context_dim, hidden, rng));
  }
  return chain;
}

// Chains

FlowOutput chain_forward(const BoundFlowChain& chain, const Tensor& z0, const Tensor& ctx) {
  Tensor z = z0;
  Tensor total = z0.tape()->constant(Matrix::Zero(1, z0.cols()));
  for (const auto& step : chain.planar) {
    const FlowOutput out = planar_forward(step, z, ctx);
    z = out.z;
    total = total + out.logdet;
  }
  for (const auto& step : chain.glow) {
    const FlowOutput out = glow_forward(step, z, ctx);
    z = out.z;
    total = total + out.logdet;
  }
  return {z, total};
}

Matrix chain_inverse(const BoundFlowChain& chain, const Matrix& z_out, const Tensor& ctx) {
  if (!chain.planar.empty()) throw ContractError("planar steps have no closed-form inverse");
  Matrix z = z_out;
  for (auto it = chain.glow.rbegin(); it != chain.glow.rend(); ++it) z = glow_inverse(*it, z, ctx);
  return z;
}

}  // namespace cflow
