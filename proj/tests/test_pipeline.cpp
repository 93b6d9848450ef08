#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "json.hpp"

#include "cflow/errors.hpp"
#include "cflow/pipeline.hpp"

namespace cflow {
namespace {

DatasetSplit tiny_data(std::uint64_t seed = 1) {
  GeneratorConfig g;
  g.n_samples = 30;
  g.img_size = 8;
  g.seed = seed;
  return generate(g);
}

TrainConfig tiny_train(std::uint64_t seed = 3) {
  TrainConfig t;
  t.seed = seed;
  t.max_epochs = 4;
  t.patience = 4;
  t.context_dim = 8;
  t.hidden = 16;
  t.latent_dim = 3;
  t.batch_size = 8;
  t.lr = 1e-3;
  return t;
}

TEST(Pipeline, TrainConfigValidation) {
  TrainConfig t;
  EXPECT_NO_THROW(t.validate());
  t.patience = 301;
  EXPECT_THROW(t.validate(), ConfigError);
  t = TrainConfig{};
  t.lr = 0.0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = TrainConfig{};
  t.batch_size = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  EXPECT_EQ(TrainConfig{}.batch_size, 32);
  EXPECT_EQ(TrainConfig{}.lr, 1e-4);
}

TEST(Pipeline, RaterModeNames) {
  EXPECT_EQ(parse_rater_mode("all"), RaterMode::All);
  EXPECT_EQ(parse_rater_mode("single_rater"), RaterMode::Single);
  EXPECT_THROW(parse_rater_mode("both"), ConfigError);
}

TEST(Pipeline, TrainingIsDeterministic) {
  const DatasetSplit data = tiny_data();
  const TrainResult a = train(tiny_train(), data);
  const TrainResult b = train(tiny_train(), data);
  EXPECT_EQ(serialize(a.best), serialize(b.best));
  EXPECT_EQ(epoch_log_csv(a.log), epoch_log_csv(b.log));
  EXPECT_NE(serialize(a.best), serialize(train(tiny_train(4), data).best));
}

TEST(Pipeline, BestCheckpointHasLowestValidationLoss) {
  const TrainResult r = train(tiny_train(), tiny_data());
  ASSERT_EQ(r.log.size(), static_cast<std::size_t>(r.epochs_run));
  double best = r.log.front().val.total;
  for (const EpochLog& e : r.log) best = std::min(best, e.val.total);
  EXPECT_EQ(r.best.best_val_loss, best);
  EXPECT_LE(r.best.best_val_loss, r.log.front().val.total);
  EXPECT_EQ(r.log.at(r.best.epoch - 1).val.total, best);
}

TEST(Pipeline, EpochLogCsvLayout) {
  const TrainResult r = train(tiny_train(), tiny_data());
  std::istringstream in(epoch_log_csv(r.log));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "epoch,train_total,train_recon,train_kl,val_total");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 4);
  }
  EXPECT_EQ(rows, r.epochs_run);
}

TEST(Pipeline, CheckpointRoundTripIsBitExact) {
  const TrainResult r = train(tiny_train(), tiny_data());
  const auto path = std::filesystem::temp_directory_path() / "cflow_test_ckpt.cfck";
  save_checkpoint(r.best, path);
  const Checkpoint back = load_checkpoint(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.model.flat_params(), r.best.model.flat_params());
  EXPECT_TRUE(back.model.config == r.best.model.config);
  EXPECT_EQ(back.best_val_loss, r.best.best_val_loss);
  EXPECT_EQ(back.epoch, r.best.epoch);
  EXPECT_EQ(back.rng_state, r.best.rng_state);
  EXPECT_EQ(serialize(back), serialize(r.best));
}

TEST(Pipeline, CheckpointRejectsCorruption) {
  const std::vector<std::uint8_t> good = serialize(train(tiny_train(), tiny_data()).best);
  std::vector<std::uint8_t> bad = good;
  bad[4] = static_cast<std::uint8_t>(kCheckpointVersion + 1);
  try {
    deserialize_checkpoint(bad);
    FAIL() << "version mismatch accepted";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  bad = good;
  bad[1] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
  bad = good;
  bad.resize(bad.size() / 2);
  EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
  bad = good;
  bad.push_back(1);
  EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
}

TEST(Pipeline, SingleSampleMeanMapIsItsProbabilities) {
  Rng rng(1);
  const DatasetSplit data = tiny_data();
  const ModelBundle model = ModelBundle::create(tiny_train().model_config(8, 8), rng);
  const Image& x = data.samples[0].image;
  const SampleSet one = sample(model, x, 1, 5);
  ASSERT_EQ(one.masks.size(), 1u);
  EXPECT_TRUE((threshold(one.mean_probability) == one.masks[0]).all());
  EXPECT_GT(one.mean_probability.minCoeff(), 0.0);
  EXPECT_LT(one.mean_probability.maxCoeff(), 1.0);

  const SampleSet a = sample(model, x, 16, 9);
  const SampleSet b = sample(model, x, 16, 9);
  EXPECT_EQ(a.mean_probability, b.mean_probability);
  for (std::size_t i = 0; i < a.masks.size(); ++i) EXPECT_TRUE((a.masks[i] == b.masks[i]).all());
  EXPECT_THROW(sample(model, x, 0, 1), ContractError);
}

TEST(Pipeline, CountDistinct) {
  Mask a(3), b(3);
  a << 1, 0, 1;
  b << 1, 1, 1;
  EXPECT_EQ(count_distinct({a, b, a}), 2);
  EXPECT_EQ(count_distinct({a}), 1);
}

TEST(Pipeline, PerfectDeterministicModelScoresZeroGedAndUnitDice) {
  Rng rng(2);
  ModelBundle model = ModelBundle::create(tiny_train().model_config(8, 8), rng);
  // Output layer ignores its input; the bias alone fixes the mask.
  Matrix& w = model.nets.decoder.weights.back();
  Matrix& bias = model.nets.decoder.biases.back();
  w.setZero();
  Mask target(64);
  for (Index p = 0; p < 64; ++p) {
    target(p) = (p % 8 >= 2 && p % 8 < 6 && p / 8 >= 3) ? 1 : 0;
    bias(p, 0) = target(p) ? 20.0 : -20.0;
  }
  DatasetSplit data = tiny_data();
  for (MultiRaterSample& s : data.samples)
    for (Mask& m : s.raters) m = target;
  EvalConfig config;
  config.n_cll = 8;
  const MetricsReport report = evaluate(model, data, config);
  EXPECT_EQ(report.ged, 0.0);
  EXPECT_EQ(report.dice, 1.0);
  EXPECT_EQ(report.images.size(), data.test.size());
}

TEST(Pipeline, ReportsAreReproducibleAndWellFormed) {
  const DatasetSplit data = tiny_data();
  const TrainResult r = train(tiny_train(), data);
  EvalConfig config;
  config.n_samples = 4;
  config.n_cll = 8;
  config.seed = 11;
  config.model_id = "toy";
  const MetricsReport a = evaluate(r.best.model, data, config);
  const MetricsReport b = evaluate(r.best.model, data, config);
  EXPECT_EQ(report_json(a), report_json(b));

  const auto j = nlohmann::json::parse(report_json(a));
  for (const char* key : {"model_id", "mode", "ged", "neg_cll", "dice", "n_samples", "seed"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["mode"], "all_raters");
  EXPECT_EQ(j["model_id"], "toy");
  EXPECT_EQ(j["n_samples"], 4);

  config.mode = RaterMode::Single;
  const auto single = nlohmann::json::parse(report_json(evaluate(r.best.model, data, config)));
  EXPECT_EQ(single["mode"], "single_rater");

  const std::string table = report_table(a);
  EXPECT_EQ(table.substr(0, table.find('\n')), "model_id\tmode\tged\tneg_cll\tdice\tn_samples\tseed");
}

TEST(Pipeline, DeriveSeedSeparatesStreams) {
  EXPECT_NE(derive_seed(0, 1, 1), derive_seed(0, 1, 2));
  EXPECT_NE(derive_seed(0, 1, 1), derive_seed(0, 2, 1));
  EXPECT_NE(derive_seed(0, 1, 1), derive_seed(1, 1, 1));
  EXPECT_EQ(derive_seed(5, 6, 7), derive_seed(5, 6, 7));
}

}  // namespace
}  // namespace cflow
