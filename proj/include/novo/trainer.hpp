#pragma once

// Unlearning-aware training loop.
//
// Each batch gets a fresh (A, U) from drop_and_expand; every sample in the
// batch is forwarded with that shared pair and the joint loss is minimized
// over the backbone and the key networks. u_h is never handed to the
// optimizer. Plain mode trains the prompt-free backbone with ordinary CE.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "novo/checkpoint.hpp"
#include "novo/config.hpp"
#include "novo/dataset.hpp"
#include "novo/model.hpp"

namespace novo {

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double l_ce = 0;
  double l_u = 0;
  double l_i = 0;
  double total = 0;
  double acc_retain_train = 0;  // % correct among retain-labelled training samples

  bool operator==(const EpochMetrics&) const = default;
};

struct TrainOptions {
  // Stop (with a resumable checkpoint) once this many epochs are complete.
  std::optional<std::size_t> stop_after_epoch;
  // Called after every epoch with the metrics and current weights.
  std::function<void(const EpochMetrics&, const NovoModel&)> on_epoch;
  // Where to dump the model if the loss goes non-finite.
  std::filesystem::path nan_snapshot;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochMetrics> log;
};

// Adam with decoupled weight decay, or SGD with momentum 0.9.
class Optimizer {
 public:
  Optimizer(const TrainConfig& config, std::vector<NamedTensor<float>> params);
  Optimizer(const TrainConfig& config, std::vector<NamedTensor<float>> params, const OptimizerState& state);

  // Clips the global gradient norm, applies one update with learning rate
  // `lr`, and clears the gradients. Returns the pre-clip norm.
  double step(double lr);
  OptimizerState state() const;
  std::uint64_t step_count() const { return step_; }
  const std::vector<NamedTensor<float>>& params() const { return params_; }

 private:
  TrainConfig config_;
  std::vector<NamedTensor<float>> params_;
  std::vector<std::vector<float>> m_, v_;
  std::uint64_t step_ = 0;
};

// Cosine decay from `base_lr` to 0 over `total_steps`.
double cosine_lr(double base_lr, std::uint64_t step, std::uint64_t total_steps);

TrainResult train(const TrainConfig& config, const LabeledDataset& train_set, const TrainOptions& options = {});

// Continues a checkpoint written mid-run up to config.epochs.
TrainResult resume(const Checkpoint& checkpoint, const LabeledDataset& train_set, const TrainOptions& options = {});

// CSV with header epoch,l_ce,l_u,l_i,total,acc_retain_train.
void write_metrics_csv(const std::vector<EpochMetrics>& log, const std::filesystem::path& path);

}  // namespace novo
