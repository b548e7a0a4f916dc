#include "novo/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "novo/binary_io.hpp"
#include "novo/errors.hpp"
#include "novo/rng.hpp"

namespace novo {

namespace {

constexpr char kMagic[8] = {'N', 'O', 'V', 'O', 'D', 'A', 'T', 'A'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kLabelWidth = 4;

}  // namespace

std::span<const float> LabeledDataset::image(std::size_t i) const {
  if (i >= size()) throw IndexError("sample " + std::to_string(i) + " out of range");
  return std::span<const float>(images).subspan(i * image_size(), image_size());
}

void LabeledDataset::validate() const {
  if (images.size() != labels.size() * image_size()) {
    throw DimensionError("dataset holds " + std::to_string(images.size()) + " pixel values for " +
                         std::to_string(labels.size()) + " samples of " + std::to_string(image_size()));
  }
  for (auto y : labels) {
    if (y >= class_count) {
      throw IndexError("label " + std::to_string(y) + " >= class count " + std::to_string(class_count));
    }
  }
  for (float v : images) {
    if (!std::isfinite(v)) throw NumericError("dataset contains a non-finite pixel");
  }
}

Tensor LabeledDataset::batch(std::span<const std::size_t> indices) const {
  std::vector<float> out;
  out.reserve(indices.size() * image_size());
  for (auto i : indices) {
    const auto img = image(i);
    out.insert(out.end(), img.begin(), img.end());
  }
  return Tensor({indices.size(), height, width, channels}, std::move(out));
}

std::vector<std::size_t> LabeledDataset::labels_of(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

std::vector<std::size_t> LabeledDataset::indices_of_class(std::size_t cls) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == cls) out.push_back(i);
  }
  return out;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices, SplitTag tag) const {
  LabeledDataset out;
  out.height = height;
  out.width = width;
  out.channels = channels;
  out.class_count = class_count;
  out.split = tag;
  out.images.reserve(indices.size() * image_size());
  for (auto i : indices) {
    const auto img = image(i);
    out.images.insert(out.images.end(), img.begin(), img.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

std::vector<float> render_pattern(const ClassPattern& p, std::size_t height, std::size_t width,
                                  std::size_t channels) {
  std::vector<float> img(height * width * channels);
  const double c = std::cos(p.orientation), s = std::sin(p.orientation);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double u = (static_cast<double>(x) * c + static_cast<double>(y) * s) / static_cast<double>(width);
      const double wave = 0.25 * std::sin(2.0 * std::numbers::pi * p.frequency * u + p.phase);
      for (std::size_t ch = 0; ch < channels; ++ch) {
        img[(y * width + x) * channels + ch] = static_cast<float>(p.color[ch] + wave);
      }
    }
  }
  return img;
}

SyntheticSuite synth_generate(const SyntheticSpec& spec) {
  if (spec.class_count < 2) throw ConfigError("synthetic suite needs at least 2 classes");
  if (spec.per_class == 0 || spec.height == 0 || spec.width == 0 || spec.channels == 0) {
    throw ConfigError("synthetic suite dimensions must be positive");
  }
  if (spec.noise < 0) throw ConfigError("noise must be non-negative");

  Rng pattern_rng = derive_rng(spec.seed, 1);
  Rng noise_rng = derive_rng(spec.seed, 2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SyntheticSuite suite;
  const std::size_t pairs = (spec.class_count + 1) / 2;
  for (std::size_t k = 0; k < pairs; ++k) {
    ClassPattern base;
    base.frequency = 1.0 + 2.0 * unit(pattern_rng);
    // Pair orientations are spread over half a turn so different pairs differ.
    base.orientation = std::numbers::pi * (static_cast<double>(k) + 0.3 * unit(pattern_rng)) /
                       static_cast<double>(pairs);
    base.phase = 2.0 * std::numbers::pi * unit(pattern_rng);
    for (std::size_t ch = 0; ch < spec.channels; ++ch) base.color.push_back(0.3 + 0.4 * unit(pattern_rng));

    const std::size_t first = 2 * k;
    const bool paired = first + 1 < spec.class_count;
    base.partner = paired ? first + 1 : first;
    suite.patterns.push_back(base);
    if (paired) {
      ClassPattern twin = base;
      twin.partner = first;
      twin.orientation += 0.25 * std::numbers::pi / static_cast<double>(pairs);
      for (auto& col : twin.color) col += 0.04 * (unit(pattern_rng) - 0.5);
      suite.patterns.push_back(twin);
    }
  }

  std::vector<std::vector<float>> templates;
  for (const auto& p : suite.patterns) templates.push_back(render_pattern(p, spec.height, spec.width, spec.channels));

  const std::size_t n = spec.class_count;
  suite.similarity.assign(n, std::vector<double>(n, 1.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t p = 0; p < templates[i].size(); ++p) {
        const double d = templates[i][p] - templates[j][p];
        acc += d * d;
      }
      suite.similarity[i][j] = 1.0 - std::sqrt(acc / static_cast<double>(templates[i].size()));
    }
  }

  auto& ds = suite.data;
  ds.height = spec.height;
  ds.width = spec.width;
  ds.channels = spec.channels;
  ds.class_count = n;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t cls = 0; cls < n; ++cls) {
    for (std::size_t s = 0; s < spec.per_class; ++s) {
      for (float v : templates[cls]) {
        const double px = v + spec.noise * noise(noise_rng);
        ds.images.push_back(static_cast<float>(std::clamp(px, 0.0, 1.0)));
      }
      ds.labels.push_back(cls);
    }
  }
  return suite;
}

std::vector<std::uint8_t> encode_dataset(const LabeledDataset& ds) {
  ds.validate();
  ByteWriter w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.height));
  w.u32(static_cast<std::uint32_t>(ds.width));
  w.u32(static_cast<std::uint32_t>(ds.channels));
  w.u32(static_cast<std::uint32_t>(ds.class_count));
  w.u32(static_cast<std::uint32_t>(ds.split));
  w.u32(kLabelWidth);
  w.f32s(ds.images);
  for (auto y : ds.labels) w.u32(static_cast<std::uint32_t>(y));
  return w.buffer();
}

LabeledDataset decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "dataset");
  const auto magic = r.take(sizeof kMagic, "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("dataset: bad magic", 0);
  const auto version = r.u32();
  if (version != kVersion) {
    throw FormatError("dataset: unsupported version " + std::to_string(version), r.offset() - 4);
  }
  LabeledDataset ds;
  const std::size_t count = r.u32();
  ds.height = r.u32();
  ds.width = r.u32();
  ds.channels = r.u32();
  ds.class_count = r.u32();
  const auto split = r.u32();
  if (split > 2) throw FormatError("dataset: unknown split tag " + std::to_string(split), r.offset() - 4);
  ds.split = static_cast<SplitTag>(split);
  const auto label_width = r.u32();
  if (label_width != kLabelWidth) {
    throw FormatError("dataset: label width " + std::to_string(label_width) + " (expected 4)", r.offset() - 4);
  }
  const std::size_t pixels = count * ds.height * ds.width * ds.channels;
  const std::size_t payload = pixels * sizeof(float) + count * kLabelWidth;
  r.need(payload, "payload");
  ds.images.resize(pixels);
  r.f32s(ds.images, "pixels");
  ds.labels.resize(count);
  for (auto& y : ds.labels) y = r.u32();
  if (r.remaining() != 0) {
    throw FormatError("dataset: " + std::to_string(r.remaining()) + " trailing bytes after payload", r.offset());
  }
  ds.validate();
  return ds;
}

void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path) {
  write_file(path, encode_dataset(ds));
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  return decode_dataset(read_file(path));
}

DatasetSplit split_dataset(const LabeledDataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must be in (0, 1)");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = derive_rng(seed, 3);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ds.size())));
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {ds.subset(train, SplitTag::kTrain), ds.subset(test, SplitTag::kTest)};
}

std::uint64_t sample_hash(const LabeledDataset& ds, std::size_t i) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    for (std::size_t k = 0; k < n; ++k) {
      h ^= b[k];
      h *= 1099511628211ULL;
    }
  };
  const auto img = ds.image(i);
  mix(img.data(), img.size() * sizeof(float));
  const auto y = static_cast<std::uint32_t>(ds.labels[i]);
  mix(&y, sizeof y);
  return h;
}

}  // namespace novo
