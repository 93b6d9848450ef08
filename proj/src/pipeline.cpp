#include "cflow/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"

#include "cflow/binio.hpp"

namespace cflow {

using nlohmann::json;

std::string to_string(RaterMode mode) { return mode == RaterMode::Single ? "single" : "all"; }

RaterMode parse_rater_mode(const std::string& name) {
  if (name == "all" || name == "all_raters") return RaterMode::All;
  if (name == "single" || name == "single_rater") return RaterMode::Single;
  throw ConfigError("unknown rater mode '" + name + "' (expected all or single)");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
  if (patience < 1 || patience > max_epochs) throw ConfigError("patience must lie in [1, max_epochs]");
  if (flow_steps < 0) throw ConfigError("K must be non-negative");
  if (flow_kind == FlowKind::None && flow_steps != 0) throw ConfigError("flow kind 'none' forces K = 0");
  if (latent_dim < 1 || context_dim < 1 || hidden < 1 || conditioner_hidden < 1)
    throw ConfigError("L, H and hidden sizes must be positive");
  if (samples_per_example < 1) throw ConfigError("samples_per_example must be positive");
}

ModelConfig TrainConfig::model_config(std::uint32_t height, std::uint32_t width) const {
  ModelConfig m;
  m.latent_dim = latent_dim;
  m.context_dim = context_dim;
  m.flow_steps = flow_kind == FlowKind::None ? 0 : flow_steps;
  m.flow_kind = flow_steps == 0 ? FlowKind::None : flow_kind;
  m.image_height = height;
  m.image_width = width;
  m.hidden = hidden;
  m.conditioner_hidden = conditioner_hidden;
  m.validate();
  return m;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

namespace {

struct Columns {
  Matrix images;
  Matrix masks;
};

// One column per (sample, rater) pair, each repeated `repeat` times.
Columns gather(const DatasetSplit& data, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs,
               int repeat = 1) {
  const Index p = data.pixels();
  const Index n = static_cast<Index>(pairs.size()) * repeat;
  Columns c{Matrix(p, n), Matrix(p, n)};
  Index col = 0;
  for (const auto& [idx, rater] : pairs) {
    const MultiRaterSample& s = data.samples.at(idx);
    for (int k = 0; k < repeat; ++k, ++col) {
      c.images.col(col) = s.image;
      c.masks.col(col) = mask_to_vector(s.raters.at(rater));
    }
  }
  return c;
}

void add_weighted(LossBreakdown& acc, const LossBreakdown& b, double w) {
  acc.total += w * b.total;
  acc.recon += w * b.recon;
  acc.kl_mc += w * b.kl_mc;
  acc.logdet_sum += w * b.logdet_sum;
}

json model_config_json(const ModelConfig& m) {
  return json{{"latent_dim", m.latent_dim},   {"context_dim", m.context_dim},
              {"flow_steps", m.flow_steps},   {"flow_kind", to_string(m.flow_kind)},
              {"image_height", m.image_height}, {"image_width", m.image_width},
              {"hidden", m.hidden},           {"hidden_layers", m.hidden_layers},
              {"conditioner_hidden", m.conditioner_hidden}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig m;
  m.latent_dim = j.at("latent_dim").get<Index>();
  m.context_dim = j.at("context_dim").get<Index>();
  m.flow_steps = j.at("flow_steps").get<Index>();
  m.flow_kind = parse_flow_kind(j.at("flow_kind").get<std::string>());
  m.image_height = j.at("image_height").get<Index>();
  m.image_width = j.at("image_width").get<Index>();
  m.hidden = j.at("hidden").get<Index>();
  m.hidden_layers = j.at("hidden_layers").get<Index>();
  m.conditioner_hidden = j.at("conditioner_hidden").get<Index>();
  return m;
}

json train_config_json(const TrainConfig& t) {
  return json{{"lr", t.lr},
              {"batch_size", t.batch_size},
              {"max_epochs", t.max_epochs},
              {"patience", t.patience},
              {"seed", t.seed},
              {"flow_kind", to_string(t.flow_kind)},
              {"flow_steps", t.flow_steps},
              {"latent_dim", t.latent_dim},
              {"context_dim", t.context_dim},
              {"hidden", t.hidden},
              {"conditioner_hidden", t.conditioner_hidden},
              {"samples_per_example", t.samples_per_example},
              {"rater_mode", to_string(t.rater_mode)}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig t;
  t.lr = j.at("lr").get<double>();
  t.batch_size = j.at("batch_size").get<int>();
  t.max_epochs = j.at("max_epochs").get<int>();
  t.patience = j.at("patience").get<int>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.flow_kind = parse_flow_kind(j.at("flow_kind").get<std::string>());
  t.flow_steps = j.at("flow_steps").get<int>();
  t.latent_dim = j.at("latent_dim").get<int>();
  t.context_dim = j.at("context_dim").get<int>();
  t.hidden = j.at("hidden").get<int>();
  t.conditioner_hidden = j.at("conditioner_hidden").get<int>();
  t.samples_per_example = j.at("samples_per_example").get<int>();
  t.rater_mode = parse_rater_mode(j.at("rater_mode").get<std::string>());
  return t;
}

}  // namespace

// Checkpoints: "CFCK", version, config JSON, parameter groups (name, rows,
// cols, row-major little-endian doubles), best validation loss, epoch, RNG
// state.

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  ByteWriter w;
  w.tag("CFCK");
  w.u32(kCheckpointVersion);
  const json config{{"model", model_config_json(ckpt.model.config)}, {"train", train_config_json(ckpt.train_config)}};
  w.str(config.dump());
  const auto names = ckpt.model.param_names();
  const auto params = ckpt.model.flat_params();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    w.str(names[i]);
    w.u32(static_cast<std::uint32_t>(params[i].rows()));
    w.u32(static_cast<std::uint32_t>(params[i].cols()));
    for (Index r = 0; r < params[i].rows(); ++r)
      for (Index c = 0; c < params[i].cols(); ++c) w.f64(params[i](r, c));
  }
  w.f64(ckpt.best_val_loss);
  w.u32(ckpt.epoch);
  w.str(ckpt.rng_state);
  return std::move(w.buffer());
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  r.expect_tag("CFCK", "CFCK checkpoint");
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported CFCK version " + std::to_string(version), version_at);

  Checkpoint ckpt;
  const std::size_t config_at = r.offset();
  try {
    const json config = json::parse(r.str("config"));
    ckpt.model.config = model_config_from_json(config.at("model"));
    ckpt.model.config.validate();
    ckpt.train_config = train_config_from_json(config.at("train"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint config: ") + e.what(), config_at);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid checkpoint config: ") + e.what(), config_at);
  }

  Rng unused(0);
  ckpt.model = ModelBundle::create(ckpt.model.config, unused);
  const auto names = ckpt.model.param_names();
  auto params = ckpt.model.flat_params();
  const std::size_t count_at = r.offset();
  if (r.u32("group count") != params.size()) throw FormatError("parameter group count does not match config", count_at);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t at = r.offset();
    const std::string name = r.str("group name");
    const std::uint32_t rows = r.u32("rows");
    const std::uint32_t cols = r.u32("cols");
    if (name != names[i] || rows != params[i].rows() || cols != params[i].cols())
      throw FormatError("parameter group '" + name + "' does not match the architecture", at);
    for (Index rr = 0; rr < rows; ++rr)
      for (Index cc = 0; cc < cols; ++cc) params[i](rr, cc) = r.f64("parameter");
  }
  ckpt.model.set_flat_params(params);
  ckpt.best_val_loss = r.f64("best validation loss");
  ckpt.epoch = r.u32("epoch");
  ckpt.rng_state = r.str("rng state");
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint", r.offset());
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) { write_file(path, serialize(ckpt)); }

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

// Training

LossBreakdown dataset_loss(const ModelBundle& model, const DatasetSplit& data, const std::vector<std::uint32_t>& indices,
                           RaterMode mode, std::uint64_t seed) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  for (std::uint32_t idx : indices) {
    const std::uint32_t raters = mode == RaterMode::All ? data.n_raters : 1;
    for (std::uint32_t r = 0; r < raters; ++r) pairs.emplace_back(idx, r);
  }
  if (pairs.empty()) throw ContractError("dataset_loss: no samples");
  Rng rng(seed);
  LossBreakdown acc;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
    const std::size_t end = std::min(pairs.size(), start + kChunk);
    const std::vector<std::pair<std::uint32_t, std::uint32_t>> chunk(pairs.begin() + start, pairs.begin() + end);
    const Columns cols = gather(data, chunk);
    Tape tape;
    const BoundModel bound = bind(tape, model, false);
    const Tensor eps = tape.constant(rng.normal(model.config.latent_dim, cols.images.cols()));
    const LossTerms terms = cflow_loss(bound, tape.constant(cols.images), tape.constant(cols.masks), eps);
    add_weighted(acc, summarize(terms), static_cast<double>(chunk.size()));
  }
  LossBreakdown mean;
  add_weighted(mean, acc, 1.0 / static_cast<double>(pairs.size()));
  return mean;
}

TrainResult train(const TrainConfig& config, const DatasetSplit& data, const EpochCallback& on_epoch) {
  config.validate();
  if (data.train.empty() || data.val.empty()) throw ContractError("train: empty training or validation split");
  const ModelConfig mc = config.model_config(data.height, data.width);
  Rng rng(config.seed);
  ModelBundle model = ModelBundle::create(mc, rng);
  const AdamConfig adam{config.lr};
  AdamState state;
  const std::uint64_t val_seed = derive_seed(config.seed, 0x76616c);

  TrainResult result;
  result.best.model = model;
  result.best.train_config = config;
  result.best.best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  std::vector<std::uint32_t> order = data.train;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    LossBreakdown train_acc;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
      for (std::size_t i = start; i < end; ++i) {
        const std::uint32_t rater =
            config.rater_mode == RaterMode::All ? static_cast<std::uint32_t>(rng.below(data.n_raters)) : 0;
        pairs.emplace_back(order[i], rater);
      }
      const Columns cols = gather(data, pairs, config.samples_per_example);
      const Matrix eps = rng.normal(mc.latent_dim, cols.images.cols());

      Tape tape;
      const BoundModel bound = bind(tape, model, true);
      const LossTerms terms =
          cflow_loss(bound, tape.constant(cols.images), tape.constant(cols.masks), tape.constant(eps));
      const Tensor loss = mean(terms.total);
      if (!std::isfinite(loss.item()))
        throw std::runtime_error("training diverged (non-finite loss) at epoch " + std::to_string(epoch));
      tape.backward(loss);

      std::vector<Matrix> params = model.flat_params();
      adam_step(params, collect_grads(bound), state, adam);
      model.set_flat_params(params);
      add_weighted(train_acc, summarize(terms), static_cast<double>(pairs.size()));
    }

    EpochLog entry;
    entry.epoch = epoch;
    add_weighted(entry.train, train_acc, 1.0 / static_cast<double>(order.size()));
    entry.val = dataset_loss(model, data, data.val, config.rater_mode, val_seed);
    result.log.push_back(entry);
    result.epochs_run = epoch;
    if (on_epoch) on_epoch(entry);

    if (entry.val.total < result.best.best_val_loss) {
      result.best.model = model;
      result.best.best_val_loss = entry.val.total;
      result.best.epoch = static_cast<std::uint32_t>(epoch);
      best_epoch = epoch;
    } else if (epoch - best_epoch >= config.patience) {
      break;
    }
  }
  result.best.rng_state = rng.state();
  return result;
}

std::string epoch_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os << "epoch,train_total,train_recon,train_kl,val_total\n";
  os << std::setprecision(17);
  for (const EpochLog& e : log)
    os << e.epoch << ',' << e.train.total << ',' << e.train.recon << ',' << e.train.kl_mc << ',' << e.val.total << '\n';
  return os.str();
}

// Sampling and evaluation

SampleSet sample(const ModelBundle& model, const Image& x, int n, std::uint64_t seed) {
  if (n < 1) throw ContractError("sample: n must be at least 1");
  if (x.size() != model.config.pixels()) throw DimensionError("sample: image size does not match the model");
  Rng rng(seed);
  Tape tape;
  const BoundModel bound = bind(tape, model, false);
  const Tensor xs = tape.constant(x.replicate(1, n));
  const Tensor z = sample_reparam(prior(bound, xs), tape.constant(rng.normal(model.config.latent_dim, n)));
  const Matrix probs = sigmoid(decode(bound, z, xs)).value();
  SampleSet out;
  for (Index j = 0; j < n; ++j) out.masks.push_back(threshold(probs.col(j)));
  out.mean_probability = probs.rowwise().mean();
  return out;
}

int count_distinct(const std::vector<Mask>& masks) {
  std::set<std::vector<std::uint8_t>> unique;
  for (const Mask& m : masks) unique.emplace(m.data(), m.data() + m.size());
  return static_cast<int>(unique.size());
}

MetricsReport evaluate(const ModelBundle& model, const DatasetSplit& data, const EvalConfig& config) {
  if (data.test.empty()) throw ContractError("evaluate: test split is empty");
  if (data.pixels() != model.config.pixels()) throw DimensionError("evaluate: dataset and model image sizes differ");
  MetricsReport report;
  report.model_id = config.model_id;
  report.mode = config.mode;
  report.n_samples = config.n_samples;
  report.n_cll = config.n_cll;
  report.seed = config.seed;

  for (std::uint32_t idx : data.test) {
    const MultiRaterSample& s = data.samples.at(idx);
    const SampleSet samples = sample(model, s.image, config.n_samples, derive_seed(config.seed, idx, 1));
    const MaskSet raters = config.mode == RaterMode::All ? MaskSet(s.raters) : MaskSet{s.raters.front()};

    ImageRecord rec;
    rec.index = idx;
    rec.ged = ged_squared(raters, samples.masks);
    rec.dice = dice(threshold(samples.mean_probability), s.raters.front());
    rec.distinct_samples = count_distinct(samples.masks);
    double cll = 0.0;
    for (std::size_t r = 0; r < raters.size(); ++r)
      cll += estimate_cll(model, s.image, raters[r], config.n_cll, derive_seed(config.seed, idx, 2 + r));
    rec.neg_cll = -cll / static_cast<double>(raters.size());
    report.images.push_back(rec);

    report.ged += rec.ged;
    report.neg_cll += rec.neg_cll;
    report.dice += rec.dice;
  }
  const double n = static_cast<double>(report.images.size());
  report.sample_count = report.images.size();
  report.ged /= n;
  report.neg_cll /= n;
  report.dice /= n;
  return report;
}

std::string report_json(const MetricsReport& report) {
  json images = json::array();
  for (const ImageRecord& r : report.images)
    images.push_back({{"index", r.index},
                      {"ged", r.ged},
                      {"neg_cll", r.neg_cll},
                      {"dice", r.dice},
                      {"distinct_samples", r.distinct_samples}});
  const json j{{"model_id", report.model_id},
               {"mode", report.mode == RaterMode::All ? "all_raters" : "single_rater"},
               {"ged", report.ged},
               {"neg_cll", report.neg_cll},
               {"dice", report.dice},
               {"n_samples", report.n_samples},
               {"n_cll", report.n_cll},
               {"seed", report.seed},
               {"sample_count", report.sample_count},
               {"images", images}};
  return j.dump(2) + "\n";
}

std::string report_table(const MetricsReport& report) {
  std::ostringstream os;
  os << "model_id\tmode\tged\tneg_cll\tdice\tn_samples\tseed\n";
  os << std::setprecision(6) << std::fixed;
  os << report.model_id << '\t' << (report.mode == RaterMode::All ? "all_raters" : "single_rater") << '\t' << report.ged
     << '\t' << report.neg_cll << '\t' << report.dice << '\t' << report.n_samples << '\t' << report.seed << '\n';
  return os.str();
}

}  // namespace cflow
