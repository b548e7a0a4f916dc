#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "novo/dataset.hpp"
#include "novo/errors.hpp"
#include "test_util.hpp"

using namespace novo;

namespace {

SyntheticSpec small_spec(double noise = 0.1, std::uint64_t seed = 0) {
  SyntheticSpec s;
  s.per_class = 40;
  s.noise = noise;
  s.seed = seed;
  return s;
}

// Nearest class mean on raw pixels, trained on `train`, scored on `test`.
double nearest_centroid_accuracy(const LabeledDataset& train, const LabeledDataset& test) {
  const std::size_t c = train.class_count, d = train.image_size();
  std::vector<std::vector<double>> mean(c, std::vector<double>(d, 0.0));
  std::vector<double> count(c, 0.0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto img = train.image(i);
    for (std::size_t p = 0; p < d; ++p) mean[train.labels[i]][p] += img[p];
    count[train.labels[i]] += 1;
  }
  for (std::size_t k = 0; k < c; ++k) {
    for (auto& v : mean[k]) v /= count[k];
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto img = test.image(i);
    double best = 1e300;
    std::size_t arg = 0;
    for (std::size_t k = 0; k < c; ++k) {
      double dist = 0;
      for (std::size_t p = 0; p < d; ++p) dist += (img[p] - mean[k][p]) * (img[p] - mean[k][p]);
      if (dist < best) {
        best = dist;
        arg = k;
      }
    }
    correct += arg == test.labels[i];
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace

TEST(Synthetic, ShapesAndLabels) {
  const auto suite = synth_generate(small_spec());
  const auto& ds = suite.data;
  EXPECT_EQ(ds.size(), 8u * 40u);
  EXPECT_EQ(ds.image_size(), 16u * 16u * 3u);
  EXPECT_NO_THROW(ds.validate());
  for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(ds.indices_of_class(k).size(), 40u);
  for (float v : ds.images) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

TEST(Synthetic, RawPixelsAreSeparableByNearestCentroid) {
  const auto suite = synth_generate(small_spec());
  const auto split = split_dataset(suite.data, 0.2, 0);
  EXPECT_GE(nearest_centroid_accuracy(split.train, split.test), 99.0);
}

TEST(Synthetic, ZeroNoiseGivesIdenticalSamplesPerClass) {
  const auto suite = synth_generate(small_spec(0.0));
  for (std::size_t k = 0; k < 8; ++k) {
    const auto idx = suite.data.indices_of_class(k);
    const auto first = suite.data.image(idx[0]);
    for (auto i : idx) {
      const auto img = suite.data.image(i);
      ASSERT_TRUE(std::equal(img.begin(), img.end(), first.begin()));
    }
  }
}

TEST(Synthetic, SameSeedSameDataDifferentSeedDifferentData) {
  EXPECT_EQ(synth_generate(small_spec(0.1, 3)).data, synth_generate(small_spec(0.1, 3)).data);
  EXPECT_NE(synth_generate(small_spec(0.1, 3)).data, synth_generate(small_spec(0.1, 4)).data);
}

TEST(Synthetic, PartnersAreMostSimilarClasses) {
  const auto suite = synth_generate(small_spec());
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_DOUBLE_EQ(suite.similarity[i][i], 1.0);
    const std::size_t partner = suite.patterns[i].partner;
    EXPECT_EQ(partner, i ^ 1u);
    EXPECT_EQ(suite.patterns[partner].partner, i);
    for (std::size_t j = 0; j < 8; ++j) {
      EXPECT_DOUBLE_EQ(suite.similarity[i][j], suite.similarity[j][i]);
      if (j != i && j != partner) {
        EXPECT_GT(suite.similarity[i][partner], suite.similarity[i][j]);
      }
    }
  }
}

TEST(Synthetic, OddClassCountLeavesLastUnpaired) {
  auto spec = small_spec();
  spec.class_count = 5;
  const auto suite = synth_generate(spec);
  EXPECT_EQ(suite.patterns.size(), 5u);
  EXPECT_EQ(suite.patterns[4].partner, 4u);
}

TEST(Synthetic, RejectsBadSpecs) {
  auto spec = small_spec();
  spec.class_count = 1;
  EXPECT_THROW(synth_generate(spec), ConfigError);
  spec = small_spec(-0.5);
  EXPECT_THROW(synth_generate(spec), ConfigError);
  spec = small_spec();
  spec.per_class = 0;
  EXPECT_THROW(synth_generate(spec), ConfigError);
}

TEST(DatasetSplit, DisjointCoveringAndReproducible) {
  const auto ds = synth_generate(small_spec()).data;
  const auto a = split_dataset(ds, 0.2, 1);
  const auto b = split_dataset(ds, 0.2, 1);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test.size(), 64u);
  EXPECT_EQ(a.train.size() + a.test.size(), ds.size());
  EXPECT_EQ(a.train.split, SplitTag::kTrain);
  EXPECT_EQ(a.test.split, SplitTag::kTest);
  std::multiset<std::uint64_t> all, parts;
  for (std::size_t i = 0; i < ds.size(); ++i) all.insert(sample_hash(ds, i));
  for (std::size_t i = 0; i < a.train.size(); ++i) parts.insert(sample_hash(a.train, i));
  for (std::size_t i = 0; i < a.test.size(); ++i) parts.insert(sample_hash(a.test, i));
  EXPECT_EQ(all, parts);
  EXPECT_THROW(split_dataset(ds, 0.0, 1), ConfigError);
  EXPECT_THROW(split_dataset(ds, 1.0, 1), ConfigError);
}

TEST(DatasetFile, RoundTripsThroughDisk) {
  novo::testing::ScratchDir dir;
  auto ds = synth_generate(small_spec()).data;
  ds.split = SplitTag::kTest;
  save_dataset(ds, dir.path() / "d.bin");
  EXPECT_EQ(load_dataset(dir.path() / "d.bin"), ds);
}

TEST(DatasetFile, HeaderLayoutIsLittleEndian) {
  auto ds = synth_generate(small_spec()).data;
  const auto bytes = encode_dataset(ds);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "NOVODATA");
  EXPECT_EQ(bytes[12] | (bytes[13] << 8), 320);  // sample count
  EXPECT_EQ(bytes.size(), 8 + 4 * 8 + 320 * (768 * 4 + 4));
}

TEST(DatasetFile, CorruptionIsReportedWithOffset) {
  const auto bytes = encode_dataset(synth_generate(small_spec()).data);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_dataset(bad_magic), FormatError);

  auto bad_version = bytes;
  bad_version[8] = 9;
  try {
    decode_dataset(bad_version);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 8u);
  }

  const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 5);
  EXPECT_THROW(decode_dataset(truncated), FormatError);

  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_dataset(trailing), FormatError);

  auto bad_label = bytes;
  bad_label[bad_label.size() - 4] = 200;
  EXPECT_THROW(decode_dataset(bad_label), IndexError);
}

TEST(DatasetFile, MissingFileIsIoError) {
  EXPECT_THROW(load_dataset("/nonexistent/dir/file.bin"), IoError);
}

TEST(Dataset, ValidateCatchesBrokenInvariants) {
  LabeledDataset ds;
  ds.height = ds.width = 1;
  ds.channels = 1;
  ds.class_count = 2;
  ds.images = {0.5f};
  ds.labels = {0};
  EXPECT_NO_THROW(ds.validate());
  ds.labels = {2};
  EXPECT_THROW(ds.validate(), IndexError);
  ds.labels = {0, 1};
  EXPECT_THROW(ds.validate(), DimensionError);
  ds.labels = {0};
  ds.images = {std::nanf("")};
  EXPECT_THROW(ds.validate(), NumericError);
  EXPECT_THROW(ds.image(1), IndexError);
}

TEST(Dataset, BatchStacksImagesInOrder) {
  const auto ds = synth_generate(small_spec()).data;
  const std::vector<std::size_t> idx{5, 0};
  const auto t = ds.batch(idx);
  EXPECT_EQ(t.shape(), (Shape{2, 16, 16, 3}));
  EXPECT_EQ(t[0], ds.image(5)[0]);
  EXPECT_EQ(t[768], ds.image(0)[0]);
  EXPECT_EQ(ds.labels_of(idx), (std::vector<std::size_t>{ds.labels[5], ds.labels[0]}));
}
