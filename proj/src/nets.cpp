#include "cflow/nets.hpp"

namespace cflow {

void ModelConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("latent dimension L must be positive");
  if (context_dim < 1) throw ConfigError("context dimension H must be positive");
  if (flow_steps < 0) throw ConfigError("flow steps K must be non-negative");
  if (flow_kind == FlowKind::None && flow_steps != 0) throw ConfigError("flow kind 'none' forces K = 0");
  if (flow_kind == FlowKind::Glow && latent_dim < 2) throw ConfigError("glow steps need L >= 2");
  if (image_height < 1 || image_width < 1) throw ConfigError("image dimensions must be positive");
  if (hidden < 1 || hidden_layers < 0 || conditioner_hidden < 1) throw ConfigError("hidden sizes must be positive");
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.latent_dim == b.latent_dim && a.context_dim == b.context_dim && a.flow_steps == b.flow_steps &&
         a.flow_kind == b.flow_kind && a.image_height == b.image_height && a.image_width == b.image_width &&
         a.hidden == b.hidden && a.hidden_layers == b.hidden_layers && a.conditioner_hidden == b.conditioner_hidden;
}

namespace {

std::vector<Index> widths(Index in, Index hidden, Index layers, Index out) {
  std::vector<Index> w{in};
  for (Index i = 0; i < layers; ++i) w.push_back(hidden);
  w.push_back(out);
  return w;
}

}  // namespace

ModelBundle ModelBundle::create(const ModelConfig& config, Rng& rng) {
  config.validate();
  const Index p = config.pixels();
  const Index l = config.latent_dim;
  ModelBundle b;
  b.config = config;
  b.nets.encoder = make_mlp(widths(2 * p, config.hidden, config.hidden_layers, 2 * l + config.context_dim), rng);
  b.nets.prior = make_mlp(widths(p, config.hidden, config.hidden_layers, 2 * l), rng);
  b.nets.decoder = make_mlp(widths(p + l, config.hidden, config.hidden_layers, p), rng);
  b.nets.flow =
      make_flow_chain(config.flow_kind, config.flow_steps, l, config.context_dim, config.conditioner_hidden, rng);
  return b;
}

std::vector<std::string> ModelBundle::param_names() const {
  std::vector<std::string> names;
  for_each_param(nets, [&](const std::string& name, const Matrix&) { names.push_back(name); });
  return names;
}

std::vector<Matrix> ModelBundle::flat_params() const {
  std::vector<Matrix> out;
  for_each_param(nets, [&](const std::string&, const Matrix& m) { out.push_back(m); });
  return out;
}

void ModelBundle::set_flat_params(const std::vector<Matrix>& params) {
  std::size_t i = 0;
  for_each_param(nets, [&](const std::string& name, Matrix& m) {
    if (i >= params.size()) throw DimensionError("set_flat_params: too few parameter groups");
    if (params[i].rows() != m.rows() || params[i].cols() != m.cols())
      throw DimensionError("set_flat_params: shape mismatch for " + name);
    m = params[i++];
  });
  if (i != params.size()) throw DimensionError("set_flat_params: too many parameter groups");
}

std::size_t ModelBundle::param_count() const {
  std::size_t n = 0;
  for_each_param(nets, [&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

BoundModel bind(Tape& tape, const ModelBundle& bundle, bool trainable) {
  auto to_tensor = [&](const Matrix& m) { return trainable ? tape.variable(m) : tape.constant(m); };
  return {&bundle.config, map_params(bundle.nets, to_tensor)};
}

std::vector<Matrix> collect_grads(const BoundModel& model) {
  std::vector<Matrix> out;
  for_each_param(model.nets, [&](const std::string&, const Tensor& t) {
    out.push_back(t.requires_grad() ? t.grad() : Matrix::Zero(t.rows(), t.cols()));
  });
  return out;
}

namespace {

void check_pixels(const ModelConfig& config, const Tensor& t, const char* what) {
  if (t.rows() != config.pixels())
    throw DimensionError(std::string(what) + " has " + std::to_string(t.rows()) + " pixels, model expects " +
                         std::to_string(config.pixels()));
}

}  // namespace

EncoderOutput encode(const BoundModel& model, const Tensor& x, const Tensor& s) {
  const ModelConfig& c = *model.config;
  check_pixels(c, x, "image");
  check_pixels(c, s, "mask");
  if (x.cols() != s.cols()) throw DimensionError("encode: image and mask batch sizes differ");
  const Tensor out = mlp_forward(model.nets.encoder, concat_rows({x, s}));
  const Index l = c.latent_dim;
  return {{slice_rows(out, 0, l), slice_rows(out, l, l)}, slice_rows(out, 2 * l, c.context_dim)};
}

DiagGaussian prior(const BoundModel& model, const Tensor& x) {
  const ModelConfig& c = *model.config;
  check_pixels(c, x, "image");
  const Tensor out = mlp_forward(model.nets.prior, x);
  return {slice_rows(out, 0, c.latent_dim), slice_rows(out, c.latent_dim, c.latent_dim)};
}

Tensor decode(const BoundModel& model, const Tensor& z, const Tensor& x) {
  const ModelConfig& c = *model.config;
  check_pixels(c, x, "image");
  if (z.rows() != c.latent_dim) throw DimensionError("decode: latent has wrong dimension");
  if (z.cols() != x.cols()) throw DimensionError("decode: latent and image batch sizes differ");
  return mlp_forward(model.nets.decoder, concat_rows({x, z}));
}

}  // namespace cflow
