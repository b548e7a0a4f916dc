#pragma once

// Key withdrawal and keyed prediction. Nothing here takes a gradient step or
// writes to model parameters; forgetting is a change of the (A, U) inputs.

#include <cstddef>
#include <span>
#include <vector>

#include "novo/batch_protocol.hpp"
#include "novo/checkpoint.hpp"
#include "novo/tensor.hpp"

namespace novo {

// Immutable partition of the label space into active and withdrawn keys.
class KeyState {
 public:
  // Every class active.
  static KeyState all_active(std::size_t num_classes);
  // Active set for a checkpoint: everything except classes sealed into it.
  static KeyState for_checkpoint(const Checkpoint& ckpt);

  std::size_t num_classes() const { return num_classes_; }
  const ClassSet& active() const { return active_; }
  const ClassSet& withdrawn() const { return withdrawn_; }
  MultiHotClassSet A() const { return multi_hot(active_, num_classes_); }
  MultiHotClassSet U() const { return complement(A()); }
  // No class left active; predictions are meaningless.
  bool degenerate() const { return active_.empty(); }

  bool operator==(const KeyState&) const = default;

 private:
  friend KeyState withdraw(const KeyState&, const ClassSet&);
  friend KeyState restore(const KeyState&, const ClassSet&);

  std::size_t num_classes_ = 0;
  ClassSet active_;
  ClassSet withdrawn_;
};

// Throw IndexError on a class index outside the label space.
KeyState withdraw(const KeyState& state, const ClassSet& classes);
KeyState restore(const KeyState& state, const ClassSet& classes);

// Parses "3,7" into {3, 7}; the empty string is the empty set.
ClassSet parse_class_list(const std::string& text);

struct Prediction {
  std::size_t label = 0;
  std::vector<float> logits;
  bool degenerate = false;
};

// One image [H, W, C] (or [1, H, W, C]); argmax is over all logits.
Prediction predict(std::span<const float> image, const Shape& image_shape, const KeyState& state,
                   const Checkpoint& ckpt);

// Batched logits [n, C] with the state's keys; no tape is recorded.
Tensor keyed_logits(const NovoModel& model, const Tensor& images, const KeyState& state);

// Bakes the withdrawal into a new checkpoint: the withdrawn classes' rows of
// the retain key network's input layer are zeroed and their U_h bits set, so
// the result behaves as the runtime withdrawal under any later key state.
// The optimizer state is dropped.
Checkpoint seal(const Checkpoint& ckpt, const KeyState& state);

}  // namespace novo
