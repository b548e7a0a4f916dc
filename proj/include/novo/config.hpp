#pragma once

// Training configuration and its flat `key = value` text form.
//
// Recognized keys (defaults in parentheses):
//   epochs (40)  batch_size (32)  learning_rate (1e-3)  optimizer (adam|sgd)
//   weight_decay (0)  beta (1)  gamma (1)  tau (1)  inverse_eps (1e-3)
//   clip_norm (1)  drop_expand (none|drop_only|drop_and_expand)  seed (0)
//   test_fraction (0.2)  mode (novo|plain)  image_height (16)  image_width (16)
//   channels (3)  patch (4)  dim (64)  heads (4)  layers (4)  mlp_ratio (4)
//   num_classes (8)
// Blank lines and `#` comments are ignored; unknown keys are errors.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "novo/batch_protocol.hpp"
#include "novo/model.hpp"
#include "novo/objectives.hpp"

namespace novo {

enum class OptimizerKind { kAdam, kSgd };

struct TrainConfig {
  ModelConfig model;
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double weight_decay = 0.0;
  LossWeights weights;
  double inverse_eps = kInverseCeEps;
  double clip_norm = 1.0;
  DropExpandMode drop_expand = DropExpandMode::kDropAndExpand;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Sets one key; throws ConfigError naming the key on a bad value.
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);

// Parses config text on top of `base`. Errors carry "line N".
TrainConfig parse_config(std::string_view text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

// Every key, one per line, in a fixed order; parse_config round-trips it.
std::string format_config(const TrainConfig& config);

}  // namespace novo
