#pragma once

// Labeled image sets, the procedural class-pattern generator, and the raw
// binary dataset file.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "novo/tensor.hpp"

namespace novo {

enum class SplitTag : std::uint32_t { kAll = 0, kTrain = 1, kTest = 2 };

struct LabeledDataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t class_count = 0;
  std::vector<float> images;  // count x height x width x channels, values in [0, 1]
  std::vector<std::size_t> labels;
  SplitTag split = SplitTag::kAll;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return height * width * channels; }
  std::span<const float> image(std::size_t i) const;

  // Throws DimensionError / IndexError / NumericError on a broken invariant.
  void validate() const;

  // [n, height, width, channels] tensor of the selected samples.
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> labels_of(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> indices_of_class(std::size_t cls) const;
  LabeledDataset subset(std::span<const std::size_t> indices, SplitTag tag) const;

  bool operator==(const LabeledDataset&) const = default;
};

struct SyntheticSpec {
  std::size_t class_count = 8;
  std::size_t per_class = 200;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 3;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

// Grating parameters of one class.
struct ClassPattern {
  double frequency = 0;    // cycles across the image
  double orientation = 0;  // radians
  double phase = 0;
  std::vector<double> color;  // per-channel bias
  std::size_t partner = 0;    // designed look-alike class (itself if unpaired)
};

struct SyntheticSuite {
  LabeledDataset data;
  std::vector<ClassPattern> patterns;
  // similarity[i][j] = 1 - RMS pixel distance between the noise-free
  // templates of classes i and j.
  std::vector<std::vector<double>> similarity;
};

// Classes come in look-alike pairs (0,1), (2,3), ...: a pair shares
// frequency and phase, differs slightly in orientation and color. With an
// odd class count the last class has no partner.
SyntheticSuite synth_generate(const SyntheticSpec& spec);

// Noise-free template image of a class.
std::vector<float> render_pattern(const ClassPattern& pattern, std::size_t height, std::size_t width,
                                  std::size_t channels);

void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path);
LabeledDataset load_dataset(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_dataset(const LabeledDataset& ds);
LabeledDataset decode_dataset(std::span<const std::uint8_t> bytes);

struct DatasetSplit {
  LabeledDataset train;
  LabeledDataset test;
};

// Shuffles indices with `seed`; the first round(test_fraction * n) go to test.
DatasetSplit split_dataset(const LabeledDataset& ds, double test_fraction, std::uint64_t seed);

// FNV-1a over a sample's pixels and label.
std::uint64_t sample_hash(const LabeledDataset& ds, std::size_t i);

}  // namespace novo
