#pragma once

// Per-batch retain/forget class sets and their multi-hot encodings.

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "novo/rng.hpp"

namespace novo {

using ClassSet = std::set<std::size_t>;

// Binary vector over the label space.
class MultiHotClassSet {
 public:
  MultiHotClassSet() = default;
  // Throws ContractError if any entry is not 0 or 1.
  explicit MultiHotClassSet(std::vector<std::uint8_t> bits);

  std::size_t size() const { return bits_.size(); }
  bool test(std::size_t i) const { return bits_.at(i) != 0; }
  std::size_t count() const;
  std::span<const std::uint8_t> bits() const { return bits_; }
  ClassSet members() const;
  std::string str() const;  // e.g. "1010"

  bool operator==(const MultiHotClassSet&) const = default;

 private:
  std::vector<std::uint8_t> bits_;
};

// Sum of the one-hot vectors of the given labels.
MultiHotClassSet multi_hot(const ClassSet& labels, std::size_t num_classes);
MultiHotClassSet complement(const MultiHotClassSet& set);
MultiHotClassSet bitwise_or(const MultiHotClassSet& a, const MultiHotClassSet& b);

enum class DropExpandMode { kNone, kDropOnly, kDropAndExpand };

std::string to_string(DropExpandMode mode);
DropExpandMode parse_drop_expand(const std::string& text);

struct BatchPlan {
  ClassSet retain;    // proxy retain set after drop/expand
  ClassSet forget;    // complement of retain
  ClassSet dropped;   // present in the batch, moved to forget
  ClassSet expanded;  // absent from the batch, moved to retain
  std::size_t r_a = 0;
  std::size_t r_u = 0;
  MultiHotClassSet A;
  MultiHotClassSet U;
};

// Plan with fixed drop/expand counts; subsets are drawn by partial
// Fisher-Yates over the sorted candidate lists.
BatchPlan plan_batch(const ClassSet& batch_labels, std::size_t num_classes, std::size_t r_a,
                     std::size_t r_u, Rng& rng);

// Draws r_a uniformly from [0, |present|) and r_u from [0, |absent|) (0 when
// the pool is empty), honoring the ablation mode.
BatchPlan drop_and_expand(const ClassSet& batch_labels, std::size_t num_classes, Rng& rng,
                          DropExpandMode mode = DropExpandMode::kDropAndExpand);

}  // namespace novo
