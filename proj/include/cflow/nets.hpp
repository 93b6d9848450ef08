#ifndef CFLOW_NETS_HPP
#define CFLOW_NETS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "cflow/dist.hpp"
#include "cflow/flows.hpp"
#include "cflow/mlp.hpp"

namespace cflow {

struct ModelConfig {
  Index latent_dim = 6;      // L
  Index context_dim = 128;   // H
  Index flow_steps = 4;      // K
  FlowKind flow_kind = FlowKind::Planar;
  Index image_height = 16;
  Index image_width = 16;
  Index hidden = 64;         // encoder/prior/decoder width
  Index hidden_layers = 2;
  Index conditioner_hidden = 8;

  Index pixels() const { return image_height * image_width; }
  void validate() const;
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

template <typename P>
struct BasicNetworks {
  BasicMlp<P> encoder;  // [x; s] -> [mu; log sigma; c]
  BasicMlp<P> prior;    // x -> [mu; log sigma]
  BasicMlp<P> decoder;  // [x; z] -> logits
  BasicFlowChain<P> flow;
};

using Networks = BasicNetworks<Matrix>;
using BoundNetworks = BasicNetworks<Tensor>;

template <typename From, typename F>
auto map_params(const BasicNetworks<From>& n, F&& f) {
  using To = std::decay_t<decltype(f(std::declval<const From&>()))>;
  return BasicNetworks<To>{map_params(n.encoder, f), map_params(n.prior, f), map_params(n.decoder, f),
                           map_params(n.flow, f)};
}

/// Fixed parameter order shared by binding, gradients, optimizer state and
/// checkpoints.
template <typename N, typename F>
void for_each_param(N& n, F&& f) {
  for_each_param(n.encoder, "encoder", f);
  for_each_param(n.prior, "prior", f);
  for_each_param(n.decoder, "decoder", f);
  for_each_param(n.flow, "flow", f);
}

/// All learnable parameters plus the architecture that produced them.
struct ModelBundle {
  ModelConfig config;
  Networks nets;

  static ModelBundle create(const ModelConfig& config, Rng& rng);

  std::vector<std::string> param_names() const;
  std::vector<Matrix> flat_params() const;
  void set_flat_params(const std::vector<Matrix>& params);
  std::size_t param_count() const;
};

/// Parameters recorded on a tape, either as differentiable leaves or as
/// constants.
struct BoundModel {
  const ModelConfig* config;
  BoundNetworks nets;
};

BoundModel bind(Tape& tape, const ModelBundle& bundle, bool trainable);

/// Gradients of the bound parameters in for_each_param order.
std::vector<Matrix> collect_grads(const BoundModel& model);

struct EncoderOutput {
  DiagGaussian base;
  Tensor context;  // H x B
};

/// x, s: pixels x B (flattened row-major images and masks).
EncoderOutput encode(const BoundModel& model, const Tensor& x, const Tensor& s);
DiagGaussian prior(const BoundModel& model, const Tensor& x);
/// z: L x B. Returns per-pixel logits, pixels x B.
Tensor decode(const BoundModel& model, const Tensor& z, const Tensor& x);

}  // namespace cflow

#endif  // CFLOW_NETS_HPP
