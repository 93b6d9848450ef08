#ifndef CFLOW_DATA_HPP
#define CFLOW_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cflow/image.hpp"

namespace cflow {

struct MultiRaterSample {
  Image image;               // height*width, values k/255
  std::vector<Mask> raters;  // R >= 2 binary masks

  bool operator==(const MultiRaterSample& other) const;
};

enum class RaterPreset {
  Standard,  // rater thresholds spread uniformly around 0.5
  Bimodal,   // each rater draws a tight or a loose boundary per sample
};

std::string to_string(RaterPreset preset);
RaterPreset parse_rater_preset(const std::string& name);

struct GeneratorConfig {
  std::uint32_t n_samples = 500;
  std::uint32_t img_size = 16;
  std::uint32_t n_raters = 4;
  double ambiguity = 0.5;      // spread of rater thresholds, in [0, 1]
  double p_empty_rater = 0.05; // chance a rater marks nothing
  std::uint64_t seed = 0;
  RaterPreset preset = RaterPreset::Standard;
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  double blur = 0.2;           // boundary softness of the underlying blob
  double noise = 0.05;         // image noise standard deviation

  /// Two systematic boundary modes: the multimodal stress case.
  static GeneratorConfig bimodal(std::uint32_t n_samples = 500, std::uint64_t seed = 0);

  void validate() const;
};

struct DatasetSplit {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t n_raters = 0;
  std::vector<MultiRaterSample> samples;
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> val;
  std::vector<std::uint32_t> test;
  GeneratorConfig config;  // echoed into the manifest

  std::uint32_t pixels() const { return height * width; }
  bool operator==(const DatasetSplit& other) const;
};

/// Synthetic multi-rater blobs. Fully determined by `config`.
DatasetSplit generate(const GeneratorConfig& config);

/// Writes the CFDS container.
void save(const DatasetSplit& split, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize(const DatasetSplit& split);

/// Reads a CFDS container. Throws FormatError with the failing byte offset.
DatasetSplit load(const std::filesystem::path& path);
DatasetSplit deserialize(const std::vector<std::uint8_t>& bytes);

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 24;

}  // namespace cflow

#endif  // CFLOW_DATA_HPP
