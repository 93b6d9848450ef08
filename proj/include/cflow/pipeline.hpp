#ifndef CFLOW_PIPELINE_HPP
#define CFLOW_PIPELINE_HPP

// Training with Adam and early stopping, prior sampling, and test-set
// evaluation. Everything here is a pure function of its inputs and seed.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cflow/data.hpp"
#include "cflow/metrics.hpp"
#include "cflow/nets.hpp"
#include "cflow/objective.hpp"
#include "cflow/optim.hpp"

namespace cflow {

enum class RaterMode {
  All,     // each epoch pairs every image with one uniformly drawn rater
  Single,  // always rater 0
};

std::string to_string(RaterMode mode);
RaterMode parse_rater_mode(const std::string& name);

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 32;
  int max_epochs = 300;
  int patience = 20;
  std::uint64_t seed = 0;
  FlowKind flow_kind = FlowKind::Planar;
  int flow_steps = 4;  // K
  int latent_dim = 6;  // L
  int context_dim = 128;  // H
  int hidden = 64;
  int conditioner_hidden = 8;
  int samples_per_example = 1;
  RaterMode rater_mode = RaterMode::All;

  void validate() const;
  ModelConfig model_config(std::uint32_t height, std::uint32_t width) const;
};

struct EpochLog {
  int epoch = 0;
  LossBreakdown train;
  LossBreakdown val;
};

struct Checkpoint {
  ModelBundle model;
  TrainConfig train_config;
  double best_val_loss = 0.0;
  std::uint32_t epoch = 0;  // epoch at which `model` was captured
  std::string rng_state;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainResult {
  Checkpoint best;
  std::vector<EpochLog> log;
  int epochs_run = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains on split.train, early-stopping on split.val. The validation loss
/// uses the same noise every epoch so that epochs are comparable.
TrainResult train(const TrainConfig& config, const DatasetSplit& data, const EpochCallback& on_epoch = {});

/// Mean loss over every (image, rater) pair of `indices` allowed by `mode`,
/// with noise drawn from `seed`.
LossBreakdown dataset_loss(const ModelBundle& model, const DatasetSplit& data, const std::vector<std::uint32_t>& indices,
                           RaterMode mode, std::uint64_t seed);

/// "epoch,train_total,train_recon,train_kl,val_total" plus one row per epoch.
std::string epoch_log_csv(const std::vector<EpochLog>& log);

struct SampleSet {
  std::vector<Mask> masks;         // thresholded at 0.5
  Eigen::VectorXd mean_probability;  // average of sigmoid outputs
};

/// Draws n latents from the conditional prior and decodes them.
SampleSet sample(const ModelBundle& model, const Image& x, int n, std::uint64_t seed);

struct EvalConfig {
  int n_samples = 16;  // GED / Dice samples per image
  int n_cll = 128;
  std::uint64_t seed = 0;
  RaterMode mode = RaterMode::All;
  std::string model_id = "model";
};

struct ImageRecord {
  std::uint32_t index = 0;
  double ged = 0.0;
  double neg_cll = 0.0;
  double dice = 0.0;
  int distinct_samples = 0;
};

struct MetricsReport {
  std::string model_id;
  RaterMode mode = RaterMode::All;
  double ged = 0.0;
  double neg_cll = 0.0;
  double dice = 0.0;
  int n_samples = 0;
  int n_cll = 0;
  std::uint64_t seed = 0;
  std::size_t sample_count = 0;  // evaluated images
  std::vector<ImageRecord> images;
};

/// Per-image GED, -CLL and Dice on split.test, plus means. In All mode GED
/// compares against all raters and -CLL averages over raters; in Single mode
/// both use rater 0 only. Dice thresholds the mean map against rater 0.
MetricsReport evaluate(const ModelBundle& model, const DatasetSplit& data, const EvalConfig& config);

std::string report_json(const MetricsReport& report);
/// Tab-separated header and one aggregate row.
std::string report_table(const MetricsReport& report);

/// Stable per-item seed derived from a base seed (splitmix64 mixing).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

int count_distinct(const std::vector<Mask>& masks);

}  // namespace cflow

#endif  // CFLOW_PIPELINE_HPP
