#ifndef CFLOW_OPTIM_HPP
#define CFLOW_OPTIM_HPP

#include <cstdint>
#include <vector>

#include "cflow/numcore.hpp"

namespace cflow {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t t = 0;  // steps taken so far
};

/// One bias-corrected Adam update, in place. Zero-initializes the moment
/// buffers on first use; increments state.t before applying the step.
void adam_step(std::vector<Matrix>& params, const std::vector<Matrix>& grads, AdamState& state,
               const AdamConfig& config);

}  // namespace cflow

#endif  // CFLOW_OPTIM_HPP
