#ifndef CFLOW_MLP_HPP
#define CFLOW_MLP_HPP

#include <span>
#include <string>
#include <vector>

#include "cflow/numcore.hpp"
#include "cflow/rng.hpp"

namespace cflow {

/// Fully connected network: tanh on hidden layers, identity on the output.
/// P is Matrix for stored parameters and Tensor for parameters bound to a
/// tape.
template <typename P>
struct BasicMlp {
  std::vector<P> weights;  // out x in
  std::vector<P> biases;   // out x 1

  std::size_t depth() const { return weights.size(); }
};

using Mlp = BasicMlp<Matrix>;
using BoundMlp = BasicMlp<Tensor>;

/// Layer widths {in, hidden..., out}. Weights ~ N(0, 1/fan_in), biases 0.
Mlp make_mlp(std::span<const Index> sizes, Rng& rng);
Mlp make_mlp(std::initializer_list<Index> sizes, Rng& rng);

Index mlp_input_dim(const Mlp& m);
Index mlp_output_dim(const Mlp& m);

/// x is in x B; returns out x B.
Tensor mlp_forward(const BoundMlp& m, const Tensor& x);

template <typename From, typename F>
auto map_params(const BasicMlp<From>& m, F&& f) {
  using To = std::decay_t<decltype(f(m.weights.front()))>;
  BasicMlp<To> out;
  out.weights.reserve(m.weights.size());
  out.biases.reserve(m.biases.size());
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    out.weights.push_back(f(m.weights[i]));
    out.biases.push_back(f(m.biases[i]));
  }
  return out;
}

/// Visits parameters in a fixed order: w0, b0, w1, b1, ...
template <typename P, typename F>
void for_each_param(BasicMlp<P>& m, const std::string& prefix, F&& f) {
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    f(prefix + ".w" + std::to_string(i), m.weights[i]);
    f(prefix + ".b" + std::to_string(i), m.biases[i]);
  }
}

template <typename P, typename F>
void for_each_param(const BasicMlp<P>& m, const std::string& prefix, F&& f) {
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    f(prefix + ".w" + std::to_string(i), m.weights[i]);
    f(prefix + ".b" + std::to_string(i), m.biases[i]);
  }
}

}  // namespace cflow

#endif  // CFLOW_MLP_HPP
