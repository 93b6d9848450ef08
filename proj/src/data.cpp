#include "cflow/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "json.hpp"

#include "cflow/binio.hpp"
#include "cflow/errors.hpp"
#include "cflow/rng.hpp"

namespace cflow {

using nlohmann::json;

bool MultiRaterSample::operator==(const MultiRaterSample& other) const {
  if (image.size() != other.image.size() || raters.size() != other.raters.size()) return false;
  if (image != other.image) return false;
  for (std::size_t r = 0; r < raters.size(); ++r)
    if (raters[r].size() != other.raters[r].size() || !(raters[r] == other.raters[r]).all()) return false;
  return true;
}

bool DatasetSplit::operator==(const DatasetSplit& other) const {
  return height == other.height && width == other.width && n_raters == other.n_raters && samples == other.samples &&
         train == other.train && val == other.val && test == other.test;
}

std::string to_string(RaterPreset preset) { return preset == RaterPreset::Bimodal ? "bimodal" : "standard"; }

RaterPreset parse_rater_preset(const std::string& name) {
  if (name == "standard") return RaterPreset::Standard;
  if (name == "bimodal") return RaterPreset::Bimodal;
  throw ConfigError("unknown rater preset '" + name + "' (expected standard or bimodal)");
}

GeneratorConfig GeneratorConfig::bimodal(std::uint32_t n_samples, std::uint64_t seed) {
  GeneratorConfig c;
  c.n_samples = n_samples;
  c.seed = seed;
  c.preset = RaterPreset::Bimodal;
  c.ambiguity = 0.9;
  c.p_empty_rater = 0.05;
  return c;
}

void GeneratorConfig::validate() const {
  if (n_samples < 10) throw ConfigError("n_samples must be at least 10");
  if (img_size < 4) throw ConfigError("img_size must be at least 4");
  if (n_raters < 2) throw ConfigError("at least two raters are required");
  if (!(ambiguity >= 0.0 && ambiguity <= 1.0)) throw ConfigError("ambiguity must lie in [0, 1]");
  if (!(p_empty_rater >= 0.0 && p_empty_rater <= 1.0)) throw ConfigError("p_empty_rater must lie in [0, 1]");
  if (!(train_fraction > 0.0 && val_fraction > 0.0 && train_fraction + val_fraction < 1.0))
    throw ConfigError("split proportions must be positive and leave a non-empty test share");
  if (!(blur > 0.0) || !(noise >= 0.0)) throw ConfigError("blur must be positive and noise non-negative");
}

namespace {

// Soft ground truth in (0, 1): a rotated ellipse with a logistic boundary.
Eigen::VectorXd soft_blob(std::uint32_t size, double blur, Rng& rng) {
  const double n = size;
  const double cx = rng.uniform(0.35, 0.65) * n;
  const double cy = rng.uniform(0.35, 0.65) * n;
  const double ax = rng.uniform(0.15, 0.3) * n;
  const double ay = rng.uniform(0.15, 0.3) * n;
  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Eigen::VectorXd out(size * size);
  for (std::uint32_t i = 0; i < size; ++i) {
    for (std::uint32_t j = 0; j < size; ++j) {
      const double dx = (j + 0.5) - cx;
      const double dy = (i + 0.5) - cy;
      const double u = (c * dx + s * dy) / ax;
      const double v = (-s * dx + c * dy) / ay;
      const double r = std::sqrt(u * u + v * v);
      out(i * size + j) = 1.0 / (1.0 + std::exp(-(1.0 - r) / blur));
    }
  }
  return out;
}

double rater_level(const GeneratorConfig& c, Rng& rng) {
  if (c.preset == RaterPreset::Bimodal) {
    const double mode = rng.bernoulli(0.5) ? 1.0 : -1.0;
    return 0.5 + c.ambiguity * (0.4 * mode + rng.uniform(-0.05, 0.05));
  }
  return 0.5 + c.ambiguity * rng.uniform(-0.4, 0.4);
}

void assign_splits(DatasetSplit& split, const GeneratorConfig& c, Rng& rng) {
  std::vector<std::uint32_t> order(c.n_samples);
  for (std::uint32_t i = 0; i < c.n_samples; ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());
  const auto n_train = static_cast<std::uint32_t>(std::lround(c.train_fraction * c.n_samples));
  const auto n_val = static_cast<std::uint32_t>(std::lround(c.val_fraction * c.n_samples));
  split.train.assign(order.begin(), order.begin() + n_train);
  split.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  split.test.assign(order.begin() + n_train + n_val, order.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
}

json config_to_json(const GeneratorConfig& c) {
  return json{{"n_samples", c.n_samples},     {"img_size", c.img_size},
              {"n_raters", c.n_raters},       {"ambiguity", c.ambiguity},
              {"p_empty_rater", c.p_empty_rater}, {"seed", c.seed},
              {"preset", to_string(c.preset)}, {"train_fraction", c.train_fraction},
              {"val_fraction", c.val_fraction}, {"blur", c.blur},
              {"noise", c.noise}};
}

GeneratorConfig config_from_json(const json& j) {
  GeneratorConfig c;
  c.n_samples = j.at("n_samples").get<std::uint32_t>();
  c.img_size = j.at("img_size").get<std::uint32_t>();
  c.n_raters = j.at("n_raters").get<std::uint32_t>();
  c.ambiguity = j.at("ambiguity").get<double>();
  c.p_empty_rater = j.at("p_empty_rater").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.preset = parse_rater_preset(j.at("preset").get<std::string>());
  c.train_fraction = j.at("train_fraction").get<double>();
  c.val_fraction = j.at("val_fraction").get<double>();
  c.blur = j.at("blur").get<double>();
  c.noise = j.at("noise").get<double>();
  return c;
}

}  // namespace

DatasetSplit generate(const GeneratorConfig& config) {
  config.validate();
  Rng rng(config.seed);
  DatasetSplit split;
  split.height = split.width = config.img_size;
  split.n_raters = config.n_raters;
  split.config = config;
  split.samples.reserve(config.n_samples);
  const Eigen::Index pixels = static_cast<Eigen::Index>(config.img_size) * config.img_size;

  for (std::uint32_t n = 0; n < config.n_samples; ++n) {
    const Eigen::VectorXd truth = soft_blob(config.img_size, config.blur, rng);
    MultiRaterSample sample;
    sample.image.resize(pixels);
    for (Eigen::Index p = 0; p < pixels; ++p) {
      const double v = std::clamp(truth(p) + config.noise * rng.normal(), 0.0, 1.0);
      sample.image(p) = std::round(v * 255.0) / 255.0;
    }
    for (std::uint32_t r = 0; r < config.n_raters; ++r) {
      const double level = rater_level(config, rng);
      const bool empty = rng.bernoulli(config.p_empty_rater);
      sample.raters.push_back(empty ? Mask(Mask::Zero(pixels)) : threshold(truth, level));
    }
    split.samples.push_back(std::move(sample));
  }
  assign_splits(split, config, rng);
  return split;
}

// Container: "CFDS", version, n, H, W, R (u32 LE); per sample H*W image
// bytes then R*H*W mask bytes; u32 manifest length; JSON manifest.

std::vector<std::uint8_t> serialize(const DatasetSplit& split) {
  ByteWriter w;
  w.tag("CFDS");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(split.samples.size()));
  w.u32(split.height);
  w.u32(split.width);
  w.u32(split.n_raters);
  std::vector<std::uint8_t> row(split.pixels());
  for (const MultiRaterSample& s : split.samples) {
    if (s.image.size() != split.pixels() || s.raters.size() != split.n_raters)
      throw DimensionError("serialize: sample does not match dataset dimensions");
    for (std::uint32_t p = 0; p < split.pixels(); ++p)
      row[p] = static_cast<std::uint8_t>(std::lround(s.image(p) * 255.0));
    w.bytes(row.data(), row.size());
    for (const Mask& m : s.raters) w.bytes(m.data(), static_cast<std::size_t>(m.size()));
  }
  const json manifest{{"format", "CFDS"},
                      {"version", kDatasetVersion},
                      {"generator", config_to_json(split.config)},
                      {"split", {{"train", split.train}, {"val", split.val}, {"test", split.test}}}};
  w.str(manifest.dump());
  return std::move(w.buffer());
}

DatasetSplit deserialize(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  r.expect_tag("CFDS", "CFDS dataset");
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kDatasetVersion)
    throw FormatError("unsupported CFDS version " + std::to_string(version), version_at);
  DatasetSplit split;
  const std::uint32_t n = r.u32("sample count");
  split.height = r.u32("height");
  split.width = r.u32("width");
  split.n_raters = r.u32("rater count");
  if (split.height == 0 || split.width == 0 || split.n_raters < 2)
    throw FormatError("invalid dataset dimensions", r.offset());
  const std::size_t pixels = split.pixels();
  const std::size_t per_sample = pixels * (1 + split.n_raters);
  if (r.remaining() / per_sample < n) throw FormatError("truncated sample payload", r.offset());

  split.samples.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    MultiRaterSample s;
    const std::uint8_t* img = r.bytes(pixels, "image");
    s.image.resize(static_cast<Eigen::Index>(pixels));
    for (std::size_t p = 0; p < pixels; ++p) s.image(static_cast<Eigen::Index>(p)) = img[p] / 255.0;
    for (std::uint32_t k = 0; k < split.n_raters; ++k) {
      const std::size_t at = r.offset();
      const std::uint8_t* m = r.bytes(pixels, "mask");
      Mask mask(static_cast<Eigen::Index>(pixels));
      for (std::size_t p = 0; p < pixels; ++p) {
        if (m[p] > 1) throw FormatError("mask byte is not 0 or 1", at + p);
        mask(static_cast<Eigen::Index>(p)) = m[p];
      }
      s.raters.push_back(std::move(mask));
    }
    split.samples.push_back(std::move(s));
  }

  const std::size_t manifest_at = r.offset();
  const std::string text = r.str("manifest");
  if (r.remaining() != 0) throw FormatError("trailing bytes after manifest", r.offset());
  try {
    const json manifest = json::parse(text);
    split.config = config_from_json(manifest.at("generator"));
    const json& sp = manifest.at("split");
    split.train = sp.at("train").get<std::vector<std::uint32_t>>();
    split.val = sp.at("val").get<std::vector<std::uint32_t>>();
    split.test = sp.at("test").get<std::vector<std::uint32_t>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what(), manifest_at);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what(), manifest_at);
  }
  std::set<std::uint32_t> seen;
  for (const auto* part : {&split.train, &split.val, &split.test})
    for (std::uint32_t idx : *part)
      if (idx >= n || !seen.insert(idx).second)
        throw FormatError("split indices out of range or overlapping", manifest_at);
  return split;
}

void save(const DatasetSplit& split, const std::filesystem::path& path) { write_file(path, serialize(split)); }

DatasetSplit load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

// binio helpers

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace cflow
