#include "cflow/mlp.hpp"

#include <cmath>

namespace cflow {

Mlp make_mlp(std::span<const Index> sizes, Rng& rng) {
  if (sizes.size() < 2) throw ConfigError("an MLP needs at least an input and an output width");
  Mlp m;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const Index fan_in = sizes[i];
    const Index fan_out = sizes[i + 1];
    if (fan_in <= 0 || fan_out <= 0) throw ConfigError("MLP layer widths must be positive");
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    m.weights.push_back(rng.normal(fan_out, fan_in) * scale);
    m.biases.push_back(Matrix::Zero(fan_out, 1));
  }
  return m;
}

Mlp make_mlp(std::initializer_list<Index> sizes, Rng& rng) {
  return make_mlp(std::span<const Index>(sizes.begin(), sizes.size()), rng);
}

Index mlp_input_dim(const Mlp& m) { return m.weights.front().cols(); }
Index mlp_output_dim(const Mlp& m) { return m.weights.back().rows(); }

Tensor mlp_forward(const BoundMlp& m, const Tensor& x) {
  if (m.weights.empty()) throw ContractError("mlp_forward: empty network");
  if (x.rows() != m.weights.front().cols())
    throw DimensionError("mlp_forward: input has " + std::to_string(x.rows()) + " features, network expects " +
                         std::to_string(m.weights.front().cols()));
  Tensor h = x;
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    h = matmul(m.weights[i], h) + m.biases[i];
    if (i + 1 < m.weights.size()) h = tanh(h);
  }
  return h;
}

}  // namespace cflow
