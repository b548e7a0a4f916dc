#include "novo/checkpoint.hpp"

#include <algorithm>
#include <cstring>

#include "novo/binary_io.hpp"
#include "novo/errors.hpp"

namespace novo {

namespace {

constexpr char kMagic[8] = {'N', 'O', 'V', 'O', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kSealedFlag = 1;

void write_tensor(ByteWriter& w, const std::string& name, const Tensor& t) {
  w.text(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  w.f32s(t.values());
}

NamedTensor<float> read_tensor(ByteReader& r) {
  NamedTensor<float> out;
  out.name = r.text();
  const auto rank = r.u32();
  if (rank > 8) throw FormatError("checkpoint: tensor '" + out.name + "' has implausible rank", r.offset() - 4);
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u32());
  std::vector<float> values(shape_numel(shape));
  r.f32s(values, "tensor values");
  out.tensor = Tensor(std::move(shape), std::move(values));
  return out;
}

bool same_tensor(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(float)) == 0;
}

}  // namespace

bool OptimizerState::operator==(const OptimizerState& other) const {
  if (step != other.step || slots.size() != other.slots.size()) return false;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].name != other.slots[i].name || !same_tensor(slots[i].tensor, other.slots[i].tensor)) return false;
  }
  return true;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u32(ckpt.sealed ? kSealedFlag : 0);
  w.text(format_config(ckpt.config));
  w.u32(static_cast<std::uint32_t>(ckpt.epoch));
  w.u64(ckpt.optimizer.step);
  w.text(ckpt.rng_state);
  w.u32(static_cast<std::uint32_t>(ckpt.withdrawn.size()));
  for (auto c : ckpt.withdrawn) w.u32(static_cast<std::uint32_t>(c));
  const auto state = ckpt.model.state();
  w.u32(static_cast<std::uint32_t>(state.size() + ckpt.optimizer.slots.size()));
  for (const auto& p : state) write_tensor(w, p.name, p.tensor);
  for (const auto& s : ckpt.optimizer.slots) write_tensor(w, s.name, s.tensor);
  return w.buffer();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  const auto magic = r.take(sizeof kMagic, "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("checkpoint: bad magic", 0);
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")",
                      r.offset() - 4);
  }
  const auto flags = r.u32();
  const auto config_offset = r.offset();
  TrainConfig config;
  try {
    config = parse_config(r.text());
    config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: bad config echo: ") + e.what(), config_offset);
  }
  const std::size_t epoch = r.u32();
  OptimizerState opt;
  opt.step = r.u64();
  std::string rng = r.text();
  ClassSet withdrawn;
  const auto n_withdrawn = r.u32();
  for (std::uint32_t i = 0; i < n_withdrawn; ++i) {
    const auto c = r.u32();
    if (c >= config.model.num_classes) {
      throw FormatError("checkpoint: withdrawn class " + std::to_string(c) + " out of range", r.offset() - 4);
    }
    withdrawn.insert(c);
  }
  const auto n_tensors = r.u32();
  std::vector<NamedTensor<float>> params;
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto t = read_tensor(r);
    if (t.name.find('/') != std::string::npos) {
      opt.slots.push_back(std::move(t));
    } else {
      t.tensor.set_requires_grad(t.name != "keys.u_h");
      params.push_back(std::move(t));
    }
  }
  if (r.remaining() != 0) {
    throw FormatError("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes", r.offset());
  }
  const auto tensors_offset = r.offset();
  try {
    Checkpoint ckpt{config, NovoModel::from_state(config.model, params), std::move(opt), epoch, std::move(rng),
                    (flags & kSealedFlag) != 0, std::move(withdrawn)};
    return ckpt;
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what(), tensors_offset);
  } catch (const DimensionError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what(), tensors_offset);
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

std::uint64_t parameter_checksum(const NovoModel& model) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : model.state()) {
    for (char ch : p.name) {
      h ^= static_cast<std::uint8_t>(ch);
      h *= 1099511628211ULL;
    }
    const auto* b = reinterpret_cast<const std::uint8_t*>(p.tensor.values().data());
    for (std::size_t i = 0; i < p.tensor.numel() * sizeof(float); ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace novo
