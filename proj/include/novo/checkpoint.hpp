#pragma once

// Versioned binary checkpoint container.
//
//   "NOVOCKPT" | u32 version | u32 flags (bit 0: sealed)
//   str config echo (format_config text)
//   u32 completed epochs | u64 optimizer step | str rng state
//   u32 withdrawn count | u32 class index...
//   u32 tensor count | per tensor: str name, u32 rank, u32 dims..., f32 values
//
// Strings are u32 length + bytes; every integer and float is little-endian.
// Optimizer moments are stored as tensors named "adam.m/<param>" and
// "adam.v/<param>" (SGD momentum uses "sgd.v/<param>").

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "novo/batch_protocol.hpp"
#include "novo/config.hpp"
#include "novo/model.hpp"

namespace novo {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<NamedTensor<float>> slots;

  bool operator==(const OptimizerState& other) const;
};

struct Checkpoint {
  TrainConfig config;
  NovoModel model;
  OptimizerState optimizer;
  std::size_t epoch = 0;
  std::string rng_state;
  bool sealed = false;
  ClassSet withdrawn;  // recorded for audit when sealed
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a over every model tensor; used to audit that inference paths never
// touch parameters.
std::uint64_t parameter_checksum(const NovoModel& model);

}  // namespace novo
