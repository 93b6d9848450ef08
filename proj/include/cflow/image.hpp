#ifndef CFLOW_IMAGE_HPP
#define CFLOW_IMAGE_HPP

#include <cstdint>

#include <Eigen/Dense>

namespace cflow {

/// Grey-level image, flattened row-major, values in [0, 1].
using Image = Eigen::VectorXd;

/// Binary segmentation, flattened row-major, entries 0 or 1.
using Mask = Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>;

inline Eigen::VectorXd mask_to_vector(const Mask& m) { return m.cast<double>().matrix(); }

inline Mask threshold(const Eigen::VectorXd& probabilities, double level = 0.5) {
  return (probabilities.array() > level).cast<std::uint8_t>();
}

}  // namespace cflow

#endif  // CFLOW_IMAGE_HPP
