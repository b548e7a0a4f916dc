#include "novo/batch_protocol.hpp"

#include <algorithm>

#include "novo/errors.hpp"

namespace novo {

MultiHotClassSet::MultiHotClassSet(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (auto b : bits_) {
    if (b > 1) throw ContractError("multi-hot entries must be 0 or 1");
  }
}

std::size_t MultiHotClassSet::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

ClassSet MultiHotClassSet::members() const {
  ClassSet out;
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (bits_[i]) out.insert(i);
  }
  return out;
}

std::string MultiHotClassSet::str() const {
  std::string s;
  for (auto b : bits_) s.push_back(b ? '1' : '0');
  return s;
}

MultiHotClassSet multi_hot(const ClassSet& labels, std::size_t num_classes) {
  std::vector<std::uint8_t> bits(num_classes, 0);
  for (auto y : labels) {
    if (y >= num_classes) {
      throw IndexError("class index " + std::to_string(y) + " out of range for " +
                       std::to_string(num_classes) + " classes");
    }
    bits[y] = 1;
  }
  return MultiHotClassSet(std::move(bits));
}

MultiHotClassSet complement(const MultiHotClassSet& set) {
  std::vector<std::uint8_t> bits(set.bits().begin(), set.bits().end());
  for (auto& b : bits) b = static_cast<std::uint8_t>(1 - b);
  return MultiHotClassSet(std::move(bits));
}

MultiHotClassSet bitwise_or(const MultiHotClassSet& a, const MultiHotClassSet& b) {
  if (a.size() != b.size()) {
    throw DimensionError("bitwise_or: lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  std::vector<std::uint8_t> bits(a.size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = std::max(a.bits()[i], b.bits()[i]);
  return MultiHotClassSet(std::move(bits));
}

std::string to_string(DropExpandMode mode) {
  switch (mode) {
    case DropExpandMode::kNone: return "none";
    case DropExpandMode::kDropOnly: return "drop_only";
    case DropExpandMode::kDropAndExpand: return "drop_and_expand";
  }
  return "?";
}

DropExpandMode parse_drop_expand(const std::string& text) {
  if (text == "none") return DropExpandMode::kNone;
  if (text == "drop_only") return DropExpandMode::kDropOnly;
  if (text == "drop_and_expand") return DropExpandMode::kDropAndExpand;
  throw ConfigError("unknown drop/expand mode '" + text + "' (none|drop_only|drop_and_expand)");
}

namespace {

ClassSet sample_subset(const std::vector<std::size_t>& pool, std::size_t count, Rng& rng) {
  std::vector<std::size_t> items = pool;
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, items.size() - 1);
    std::swap(items[i], items[pick(rng)]);
  }
  return ClassSet(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(count));
}

}  // namespace

BatchPlan plan_batch(const ClassSet& batch_labels, std::size_t num_classes, std::size_t r_a,
                     std::size_t r_u, Rng& rng) {
  std::vector<std::size_t> present, absent;
  for (std::size_t c = 0; c < num_classes; ++c) {
    (batch_labels.count(c) ? present : absent).push_back(c);
  }
  if (batch_labels.size() != present.size()) {
    throw IndexError("batch label out of range for " + std::to_string(num_classes) + " classes");
  }
  if (r_a > present.size() || r_u > absent.size()) {
    throw ContractError("drop/expand counts exceed their candidate pools");
  }
  BatchPlan plan;
  plan.r_a = r_a;
  plan.r_u = r_u;
  plan.dropped = sample_subset(present, r_a, rng);
  plan.expanded = sample_subset(absent, r_u, rng);
  for (auto c : present) {
    if (!plan.dropped.count(c)) plan.retain.insert(c);
  }
  plan.retain.insert(plan.expanded.begin(), plan.expanded.end());
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (!plan.retain.count(c)) plan.forget.insert(c);
  }
  plan.A = multi_hot(plan.retain, num_classes);
  plan.U = complement(plan.A);
  return plan;
}

BatchPlan drop_and_expand(const ClassSet& batch_labels, std::size_t num_classes, Rng& rng,
                          DropExpandMode mode) {
  if (batch_labels.empty()) throw ContractError("drop_and_expand: empty batch");
  if (num_classes < 2) throw ContractError("drop_and_expand: need at least 2 classes");
  for (auto y : batch_labels) {
    if (y >= num_classes) throw IndexError("batch label " + std::to_string(y) + " out of range");
  }
  const std::size_t present = batch_labels.size();
  const std::size_t absent = num_classes - present;
  auto draw_below = [&rng](std::size_t n) -> std::size_t {
    if (n == 0) return 0;
    std::uniform_int_distribution<std::size_t> d(0, n - 1);
    return d(rng);
  };
  std::size_t r_a = 0, r_u = 0;
  if (mode != DropExpandMode::kNone) r_a = draw_below(present);
  if (mode == DropExpandMode::kDropAndExpand) r_u = draw_below(absent);
  return plan_batch(batch_labels, num_classes, r_a, r_u, rng);
}

}  // namespace novo
