#include "cflow/optim.hpp"

#include <cmath>

namespace cflow {

void adam_step(std::vector<Matrix>& params, const std::vector<Matrix>& grads, AdamState& state,
               const AdamConfig& config) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const Matrix& p : params) {
      state.m.push_back(Matrix::Zero(p.rows(), p.cols()));
      state.v.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i].rows() || grads[i].cols() != params[i].cols() ||
        state.m[i].rows() != params[i].rows() || state.m[i].cols() != params[i].cols())
      throw DimensionError("adam_step: shape mismatch in parameter group " + std::to_string(i));
  }

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grads[i];
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grads[i].cwiseProduct(grads[i]);
    params[i].array() -=
        config.lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + config.epsilon);
  }
}

}  // namespace cflow
