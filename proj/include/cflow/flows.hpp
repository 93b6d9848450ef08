#ifndef CFLOW_FLOWS_HPP
#define CFLOW_FLOWS_HPP

// Conditional bijections on the latent space.
//
// Every step reads its parameters from small conditioner networks evaluated
// on the context vector c produced by the encoder. Tensors are batched: z is
// L x B, ctx is H x B, and log-determinants come back as 1 x B.

#include <string>
#include <vector>

#include "cflow/mlp.hpp"

namespace cflow {

enum class FlowKind { None, Planar, Glow };

std::string to_string(FlowKind kind);
FlowKind parse_flow_kind(const std::string& name);

struct FlowOutput {
  Tensor z;
  Tensor logdet;  // 1 x B
};

// Planar step: z' = z + u_hat * tanh(w^T z + b).

template <typename P>
struct BasicPlanarStep {
  BasicMlp<P> conditioner;  // c -> [u (L); w (L); b (1)]
};

struct PlanarParams {
  Tensor u;  // L x B, as produced by the conditioner
  Tensor w;  // L x B
  Tensor b;  // 1 x B
};

/// Splits a (2L+1) x B conditioner output into (u, w, b).
PlanarParams planar_params(const Tensor& conditioner_out, Index latent_dim);

/// u + [softplus(w^T u) - 1 - w^T u] w / |w|^2, so that w^T u_hat > -1.
Tensor planar_constrained_u(const Tensor& u, const Tensor& w);

/// Applies a planar map with explicit parameters. logdet = log(1 + u_hat^T psi(z)),
/// psi(z) = tanh'(w^T z + b) w.
FlowOutput planar_apply(const PlanarParams& params, const Tensor& z);

FlowOutput planar_forward(const BasicPlanarStep<Tensor>& step, const Tensor& z, const Tensor& ctx);

// Glow step: ActNorm, invertible linear map, affine coupling.

template <typename P>
struct BasicGlowStep {
  BasicMlp<P> actnorm;   // c -> [log s (L); b (L)]
  BasicMlp<P> linear;    // c -> L*L raw factor entries, row-major
  BasicMlp<P> coupling;  // [z_b; c] -> [log r (|z_a|); t (|z_a|)]
};

/// |z_a| = ceil(L/2): z_a is the leading block of coordinates.
inline Index coupling_split(Index latent_dim) { return (latent_dim + 1) / 2; }

/// Builds W = L_unit * U from raw conditioner entries: strictly-lower part of
/// L_unit and strictly-upper part of U are taken verbatim, diag(L_unit) = 1,
/// diag(U) = exp(raw diagonal). Returns (L_unit, U) flattened row-major,
/// each (L*L) x B.
std::pair<Tensor, Tensor> glow_lu_factors(const Tensor& raw, Index latent_dim);

FlowOutput glow_forward(const BasicGlowStep<Tensor>& step, const Tensor& z, const Tensor& ctx);

/// Exact inverse of glow_forward for the same ctx. Not differentiable.
Matrix glow_inverse(const BasicGlowStep<Tensor>& step, const Matrix& z_out, const Tensor& ctx);

/// Dense W for column `col` of the batch, for diagnostics and oracles.
Matrix glow_weight_matrix(const BasicGlowStep<Tensor>& step, const Tensor& ctx, Index col);

// Chains

template <typename P>
struct BasicFlowChain {
  FlowKind kind = FlowKind::None;
  std::vector<BasicPlanarStep<P>> planar;
  std::vector<BasicGlowStep<P>> glow;

  std::size_t size() const { return kind == FlowKind::Planar ? planar.size() : glow.size(); }
};

using PlanarStep = BasicPlanarStep<Matrix>;
using GlowStep = BasicGlowStep<Matrix>;
using FlowChain = BasicFlowChain<Matrix>;
using BoundFlowChain = BasicFlowChain<Tensor>;

PlanarStep make_planar_step(Index latent_dim, Index context_dim, Index hidden, Rng& rng);
GlowStep make_glow_step(Index latent_dim, Index context_dim, Index hidden, Rng& rng);
FlowChain make_flow_chain(FlowKind kind, Index steps, Index latent_dim, Index context_dim, Index hidden, Rng& rng);

/// Applies steps 1..K in order; logdet is the running sum of step logdets.
/// K = 0 returns (z0, 0).
FlowOutput chain_forward(const BoundFlowChain& chain, const Tensor& z0, const Tensor& ctx);

/// Reverse evaluation of a Glow chain. Throws ContractError for planar chains,
/// which have no closed-form inverse.
Matrix chain_inverse(const BoundFlowChain& chain, const Matrix& z_out, const Tensor& ctx);

template <typename From, typename F>
auto map_params(const BasicPlanarStep<From>& s, F&& f) {
  using To = std::decay_t<decltype(f(std::declval<const From&>()))>;
  return BasicPlanarStep<To>{map_params(s.conditioner, f)};
}

template <typename From, typename F>
auto map_params(const BasicGlowStep<From>& s, F&& f) {
  using To = std::decay_t<decltype(f(std::declval<const From&>()))>;
  return BasicGlowStep<To>{map_params(s.actnorm, f), map_params(s.linear, f), map_params(s.coupling, f)};
}

template <typename From, typename F>
auto map_params(const BasicFlowChain<From>& c, F&& f) {
  using To = std::decay_t<decltype(f(std::declval<const From&>()))>;
  BasicFlowChain<To> out;
  out.kind = c.kind;
  for (const auto& s : c.planar) out.planar.push_back(map_params(s, f));
  for (const auto& s : c.glow) out.glow.push_back(map_params(s, f));
  return out;
}

template <typename P, typename F>
void for_each_param(BasicFlowChain<P>& chain, const std::string& prefix, F&& f) {
  for (std::size_t k = 0; k < chain.planar.size(); ++k)
    for_each_param(chain.planar[k].conditioner, prefix + std::to_string(k) + ".planar", f);
  for (std::size_t k = 0; k < chain.glow.size(); ++k) {
    const std::string p = prefix + std::to_string(k);
    for_each_param(chain.glow[k].actnorm, p + ".actnorm", f);
    for_each_param(chain.glow[k].linear, p + ".linear", f);
    for_each_param(chain.glow[k].coupling, p + ".coupling", f);
  }
}

template <typename P, typename F>
void for_each_param(const BasicFlowChain<P>& chain, const std::string& prefix, F&& f) {
  for (std::size_t k = 0; k < chain.planar.size(); ++k)
    for_each_param(chain.planar[k].conditioner, prefix + std::to_string(k) + ".planar", f);
  for (std::size_t k = 0; k < chain.glow.size(); ++k) {
    const std::string p = prefix + std::to_string(k);
    for_each_param(chain.glow[k].actnorm, p + ".actnorm", f);
    for_each_param(chain.glow[k].linear, p + ".linear", f);
    for_each_param(chain.glow[k].coupling, p + ".coupling", f);
  }
}

}  // namespace cflow

#endif  // CFLOW_FLOWS_HPP
