#pragma once

// Retain/forget accuracy, membership inference, vicinity analysis, the
// logit-masking comparator and linear probes on exported features.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "novo/dataset.hpp"
#include "novo/model.hpp"
#include "novo/unlearn.hpp"

namespace novo {

struct EvalReport {
  std::size_t num_classes = 0;
  ClassSet withdrawn;
  std::optional<double> acc_retain;  // percent; absent when no active-class sample exists
  std::optional<double> acc_forget;  // percent; absent when no withdrawn-class sample exists
  std::optional<double> mia;
  std::size_t n_retain = 0;
  std::size_t n_forget = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<std::optional<double>> per_class;

  std::optional<double> overall() const;
};

// Accuracies over argmax of all logits [n, C] for the given labels.
EvalReport report_from_logits(const Tensor& logits, std::span<const std::size_t> labels, const ClassSet& withdrawn);

// Batched keyed forward over the test set; no tape is recorded.
Tensor dataset_logits(const NovoModel& model, const LabeledDataset& data, const KeyState& state,
                      std::size_t batch_size = 256);
EvalReport evaluate(const NovoModel& model, const KeyState& state, const LabeledDataset& test);

// Metrics CSV: rows "metric,value" in the order acc_retain, acc_forget, mia,
// n_retain, n_forget, acc_class_0..C-1; an absent value is an empty field.
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
// Confusion CSV: header "true,pred_0,...", one row per true class.
void write_confusion_csv(const EvalReport& report, const std::filesystem::path& path);
std::string format_report(const EvalReport& report);

// Binary logistic regression trained by full-batch gradient descent on the
// class-balanced log-loss, with per-feature standardization fit on the
// training rows only.
class LogisticRegression {
 public:
  struct Options {
    std::size_t iterations = 2000;
    double learning_rate = 0.5;
    double l2 = 1e-4;
    // Per-feature weight sign constraint (-1: w <= 0, +1: w >= 0, 0: free),
    // enforced by projection after every step. Empty means all free.
    std::vector<int> weight_sign;
  };

  LogisticRegression() = default;
  // rows: n x f, row-major. Throws ContractError if y holds a single class.
  void fit(const std::vector<double>& rows, std::size_t features, const std::vector<int>& y, const Options& options);
  void fit(const std::vector<double>& rows, std::size_t features, const std::vector<int>& y) {
    fit(rows, features, y, Options{});
  }
  double probability(std::span<const double> row) const;
  // 1 when probability >= 0.5. A fit whose weights are all zero carries no
  // evidence and classifies everything as 0.
  int classify(std::span<const double> row) const;
  double accuracy(const std::vector<double>& rows, const std::vector<int>& y) const;

  const std::vector<double>& weights() const { return w_; }
  double bias() const { return b_; }

 private:
  std::size_t features_ = 0;
  std::vector<double> mean_, scale_, w_;
  double b_ = 0;
};

enum class MiaFeatures { kLoss, kLossEntropyMargin };

struct MiaOptions {
  MiaFeatures features = MiaFeatures::kLoss;
  double attacker_train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct MiaResult {
  double score = 0;            // percent of forget-class training samples judged member
  double attacker_accuracy = 0;  // percent, on the held-out 20% of attacker data
  std::size_t n_target = 0;
};

// Per-sample attack features from logits [n, C]: the loss, optionally with
// the softmax entropy and the true-class margin.
std::vector<double> mia_features(const Tensor& logits, std::span<const std::size_t> labels, MiaFeatures kind);

// Attacker: members are retain-class training samples, non-members are
// retain-class test samples. Model outputs are queried with `state`. The
// loss weight is constrained to be non-positive (membership can only mean
// lower loss); without it the sign is arbitrary whenever the retain-class
// train and test losses coincide.
MiaResult mia_score(const NovoModel& model, const KeyState& state, const LabeledDataset& train,
                    const LabeledDataset& test, const ClassSet& forget, const MiaOptions& options = {});

struct VicinityEntry {
  std::size_t withdrawn_class = 0;
  std::size_t modal_class = 0;
  double share = 0;  // fraction of the class's predictions that went to modal_class
  std::optional<std::size_t> nearest_active;
  std::optional<bool> modal_is_nearest;
  bool no_near_neighbor = false;
};

// A withdrawn class has no near neighbour when its most similar active class
// is less than `margin` more similar than the median active class.
std::vector<VicinityEntry> vicinity_confusion(const EvalReport& report,
                                              const std::optional<std::vector<std::vector<double>>>& similarity,
                                              double margin = 0.05);

// Conventional-model comparator: logits of the forget classes are replaced
// by -inf after the classifier.
Tensor mask_logits(const Tensor& logits, const ClassSet& forget);
EvalReport masking_baseline(const NovoModel& plain_model, const ClassSet& forget, const LabeledDataset& test);

// Final-layer token features [n, d] for a whole dataset.
Tensor dataset_features(const NovoModel& model, const LabeledDataset& data, const KeyState& state,
                        FeatureToken token, std::size_t batch_size = 256);
void write_features_csv(const Tensor& features, const std::filesystem::path& path);

// Binary linear probe separating class `a` from class `b`: fit on the
// training features, accuracy (percent) on the test features.
double probe_accuracy(const Tensor& train_features, std::span<const std::size_t> train_labels,
                      const Tensor& test_features, std::span<const std::size_t> test_labels, std::size_t a,
                      std::size_t b);

// Square similarity matrix as headerless CSV.
void save_similarity(const std::vector<std::vector<double>>& sim, const std::filesystem::path& path);
std::vector<std::vector<double>> load_similarity(const std::filesystem::path& path);

struct EpochEval {
  std::size_t epoch = 0;
  std::optional<double> acc_retain;
  std::optional<double> acc_forget;
};

// First epoch at which the withdrawn classes are forgotten (acc_forget at or
// below `forget_max`) while the model is useful on the rest (acc_retain at
// or above `retain_min`).
std::optional<std::size_t> convergence_epoch(const std::vector<EpochEval>& curve, double forget_max = 5.0,
                                             double retain_min = 90.0);

}  // namespace novo
