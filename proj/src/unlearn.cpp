#include "novo/unlearn.hpp"

#include <algorithm>
#include <sstream>

#include "novo/errors.hpp"

namespace novo {

namespace {

void require_known(const ClassSet& classes, std::size_t num_classes) {
  for (auto c : classes) {
    if (c >= num_classes) {
      throw IndexError("class " + std::to_string(c) + " outside label space of " + std::to_string(num_classes));
    }
  }
}

}  // namespace

KeyState KeyState::all_active(std::size_t num_classes) {
  KeyState s;
  s.num_classes_ = num_classes;
  for (std::size_t c = 0; c < num_classes; ++c) s.active_.insert(c);
  return s;
}

KeyState KeyState::for_checkpoint(const Checkpoint& ckpt) {
  return withdraw(all_active(ckpt.config.model.num_classes), ckpt.withdrawn);
}

KeyState withdraw(const KeyState& state, const ClassSet& classes) {
  require_known(classes, state.num_classes_);
  KeyState out = state;
  for (auto c : classes) {
    out.active_.erase(c);
    out.withdrawn_.insert(c);
  }
  return out;
}

KeyState restore(const KeyState& state, const ClassSet& classes) {
  require_known(classes, state.num_classes_);
  KeyState out = state;
  for (auto c : classes) {
    if (out.withdrawn_.erase(c) != 0) out.active_.insert(c);
  }
  return out;
}

ClassSet parse_class_list(const std::string& text) {
  ClassSet out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    const auto last = item.find_last_not_of(" \t");
    const std::string token = item.substr(first, last - first + 1);
    if (!std::all_of(token.begin(), token.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
      throw ConfigError("'" + token + "' is not a class index");
    }
    out.insert(static_cast<std::size_t>(std::stoull(token)));
  }
  return out;
}

Tensor keyed_logits(const NovoModel& model, const Tensor& images, const KeyState& state) {
  if (state.num_classes() != model.config().num_classes) {
    throw DimensionError("key state covers " + std::to_string(state.num_classes()) + " classes, model has " +
                         std::to_string(model.config().num_classes));
  }
  return model.logits(images, state.A(), state.U());
}

Prediction predict(std::span<const float> image, const Shape& image_shape, const KeyState& state,
                   const Checkpoint& ckpt) {
  const auto& mc = ckpt.config.model;
  const Shape expected{mc.image_height, mc.image_width, mc.channels};
  Shape got = image_shape;
  if (got.size() == 4 && got[0] == 1) got.erase(got.begin());
  if (got != expected || image.size() != shape_numel(expected)) {
    throw DimensionError("image shape " + shape_str(image_shape) + " does not match model input " +
                         shape_str(expected));
  }
  const Tensor batch({1, mc.image_height, mc.image_width, mc.channels}, {image.begin(), image.end()});
  const Tensor logits = keyed_logits(ckpt.model, batch, state);
  Prediction p;
  p.logits.assign(logits.values().begin(), logits.values().end());
  p.label = static_cast<std::size_t>(std::max_element(p.logits.begin(), p.logits.end()) - p.logits.begin());
  p.degenerate = state.degenerate();
  return p;
}

Checkpoint seal(const Checkpoint& ckpt, const KeyState& state) {
  if (!ckpt.config.model.prompts) throw ContractError("cannot seal a plain (prompt-free) checkpoint");
  if (state.num_classes() != ckpt.config.model.num_classes) {
    throw DimensionError("key state does not match the checkpoint's label space");
  }
  Checkpoint out{ckpt.config, ckpt.model.clone(), {}, ckpt.epoch, ckpt.rng_state, true, ckpt.withdrawn};
  auto& keys = out.model.keys();
  auto w = keys.ltn_in.weight.mutable_values();
  const std::size_t hidden = keys.ltn_in.weight.dim(1);
  auto hold = keys.u_h.mutable_values();
  for (auto c : state.withdrawn()) {
    std::fill_n(w.begin() + static_cast<std::ptrdiff_t>(c * hidden), hidden, 0.0f);
    hold[c] = 1.0f;
    out.withdrawn.insert(c);
  }
  return out;
}

}  // namespace novo
