#include <cmath>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "cflow/binio.hpp"
#include "cflow/data.hpp"
#include "cflow/errors.hpp"
#include "cflow/metrics.hpp"

namespace cflow {
namespace {

GeneratorConfig small(std::uint32_t n = 40, std::uint64_t seed = 1) {
  GeneratorConfig c;
  c.n_samples = n;
  c.img_size = 8;
  c.seed = seed;
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("cflow_test_" + name);
}

TEST(Data, NoAmbiguityMeansIdenticalRaters) {
  GeneratorConfig c = small();
  c.ambiguity = 0.0;
  c.p_empty_rater = 0.0;
  for (const MultiRaterSample& s : generate(c).samples)
    for (const Mask& m : s.raters) EXPECT_TRUE((m == s.raters.front()).all());
}

TEST(Data, GenerationIsDeterministic) {
  EXPECT_EQ(serialize(generate(small(60, 7))), serialize(generate(small(60, 7))));
  EXPECT_NE(serialize(generate(small(60, 7))), serialize(generate(small(60, 8))));
}

TEST(Data, AmbiguityProducesRaterDisagreement) {
  GeneratorConfig c = small(200);
  c.ambiguity = 0.5;
  double total = 0.0;
  int pairs = 0;
  for (const MultiRaterSample& s : generate(c).samples)
    for (std::size_t i = 0; i < s.raters.size(); ++i)
      for (std::size_t j = i + 1; j < s.raters.size(); ++j, ++pairs) total += iou_distance(s.raters[i], s.raters[j]);
  EXPECT_GT(total / pairs, 0.0);
}

TEST(Data, ImagesAreQuantizedToBytes) {
  for (const MultiRaterSample& s : generate(small()).samples) {
    EXPECT_GE(s.image.minCoeff(), 0.0);
    EXPECT_LE(s.image.maxCoeff(), 1.0);
    for (Index p = 0; p < s.image.size(); ++p)
      EXPECT_NEAR(s.image(p) * 255.0, std::round(s.image(p) * 255.0), 1e-9);
  }
}

TEST(Data, SplitsAreDisjointWithSixtyTwentyTwentyProportions) {
  for (std::uint32_t n : {10u, 11u, 13u, 37u, 100u, 501u}) {
    const DatasetSplit d = generate(small(n, n));
    std::set<std::uint32_t> all;
    for (const auto* part : {&d.train, &d.val, &d.test}) all.insert(part->begin(), part->end());
    EXPECT_EQ(all.size(), n);
    EXPECT_EQ(d.train.size() + d.val.size() + d.test.size(), n);
    EXPECT_LE(std::abs(static_cast<double>(d.train.size()) - 0.6 * n), 1.0) << n;
    EXPECT_LE(std::abs(static_cast<double>(d.val.size()) - 0.2 * n), 1.0) << n;
    EXPECT_LE(std::abs(static_cast<double>(d.test.size()) - 0.2 * n), 1.0) << n;
  }
}

TEST(Data, EveryRaterProducesEmptyAndNonEmptyMasks) {
  GeneratorConfig c;
  c.n_samples = 500;
  const DatasetSplit d = generate(c);
  for (std::uint32_t r = 0; r < d.n_raters; ++r) {
    bool empty = false;
    bool non_empty = false;
    for (const MultiRaterSample& s : d.samples) {
      const bool any = (s.raters[r] != 0).any();
      non_empty |= any;
      empty |= !any;
    }
    EXPECT_TRUE(empty && non_empty) << "rater " << r;
  }
}

TEST(Data, BimodalPresetSplitsRatersIntoTwoBoundaryModes) {
  GeneratorConfig c = GeneratorConfig::bimodal(200, 3);
  c.p_empty_rater = 0.0;
  const DatasetSplit d = generate(c);
  int mixed = 0;
  for (const MultiRaterSample& s : d.samples) {
    std::set<Index> areas;
    for (const Mask& m : s.raters) areas.insert((m != 0).count());
    mixed += areas.size() > 1 ? 1 : 0;
  }
  EXPECT_GT(mixed, 150);
}

TEST(Data, InvalidConfigIsRejected) {
  GeneratorConfig c = small();
  c.n_samples = 9;
  EXPECT_THROW(generate(c), ConfigError);
  c = small();
  c.n_raters = 1;
  EXPECT_THROW(generate(c), ConfigError);
  c = small();
  c.train_fraction = 0.9;
  c.val_fraction = 0.2;
  EXPECT_THROW(generate(c), ConfigError);
}

TEST(Data, SaveLoadRoundTrip) {
  const DatasetSplit d = generate(small(30, 4));
  const auto path = temp_path("roundtrip.cfds");
  save(d, path);
  const DatasetSplit back = load(path);
  EXPECT_TRUE(back == d);
  EXPECT_EQ(serialize(back), serialize(d));
  std::filesystem::remove(path);
}

TEST(Data, FileSizeFollowsLayout) {
  const DatasetSplit d = generate(small(25, 5));
  const std::vector<std::uint8_t> bytes = serialize(d);
  const std::size_t hw = 8 * 8;
  const std::size_t payload = 25 * (hw + d.n_raters * hw);
  ByteReader r(bytes);
  r.bytes(kDatasetHeaderBytes + payload, "skip");
  const std::uint32_t manifest = r.u32("manifest length");
  EXPECT_EQ(bytes.size(), kDatasetHeaderBytes + payload + 4 + manifest);
}

TEST(Data, CorruptionReportsByteOffset) {
  const std::vector<std::uint8_t> good = serialize(generate(small(12, 6)));

  std::vector<std::uint8_t> bad = good;
  bad[0] = 'X';
  try {
    deserialize(bad);
    FAIL() << "bad magic accepted";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }

  bad = good;
  bad[4] = 2;
  try {
    deserialize(bad);
    FAIL() << "future version accepted";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }

  bad = good;
  const std::size_t first_mask = kDatasetHeaderBytes + 64;
  bad[first_mask + 3] = 7;
  try {
    deserialize(bad);
    FAIL() << "non-binary mask accepted";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), first_mask + 3);
  }

  bad = good;
  bad.resize(good.size() - 10);
  EXPECT_THROW(deserialize(bad), FormatError);
  bad = good;
  bad.push_back(0);
  EXPECT_THROW(deserialize(bad), FormatError);
  bad.assign(good.begin(), good.begin() + 10);
  EXPECT_THROW(deserialize(bad), FormatError);
}

TEST(Data, MissingFileIsReported) {
  EXPECT_THROW(load(temp_path("does_not_exist.cfds")), std::runtime_error);
}

}  // namespace
}  // namespace cflow
