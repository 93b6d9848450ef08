#include "cflow/objective.hpp"

namespace cflow {

Tensor recon_loglik(const Tensor& logits, const Tensor& s) {
  if (logits.rows() != s.rows() || logits.cols() != s.cols())
    throw DimensionError("recon_loglik: logits and mask shapes differ");
  if (!s.value().unaryExpr([](double v) { return v == 0.0 || v == 1.0; }).all())
    throw ContractError("recon_loglik: mask must be binary");
  return sum(s * logits - softplus(logits), 0);
}

LossBreakdown summarize(const LossTerms& terms) {
  return {terms.total.value().mean(), terms.recon.value().mean(), terms.kl_mc.value().mean(),
          terms.logdet_sum.value().mean()};
}

namespace {

LossTerms loss_impl(const BoundModel& model, const Tensor& x, const Tensor& s, const Tensor& eps, bool use_flow) {
  const EncoderOutput enc = encode(model, x, s);
  const Tensor z0 = sample_reparam(enc.base, eps);
  const Tensor log_q0 = log_prob(enc.base, z0);

  Tensor z = z0;
  Tensor logdet = x.tape()->constant(Matrix::Zero(1, x.cols()));
  if (use_flow) {
    const FlowOutput flowed = chain_forward(model.nets.flow, z0, enc.context);
    z = flowed.z;
    logdet = flowed.logdet;
  }

  const Tensor log_p = log_prob(prior(model, x), z);
  const Tensor recon = -recon_loglik(decode(model, z, x), s);
  const Tensor kl = log_q0 - logdet - log_p;
  return {recon + kl, recon, kl, logdet};
}

}  // namespace

LossTerms cflow_loss(const BoundModel& model, const Tensor& x, const Tensor& s, const Tensor& eps) {
  return loss_impl(model, x, s, eps, true);
}

LossTerms cvae_loss(const BoundModel& model, const Tensor& x, const Tensor& s, const Tensor& eps) {
  return loss_impl(model, x, s, eps, false);
}

}  // namespace cflow
