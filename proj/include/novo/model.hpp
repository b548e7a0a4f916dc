#pragma once

// Prompt-keyed vision transformer.
//
// Two multi-hot vectors, A (active/retain classes) and U (withdrawn/forget
// classes), are turned into one retain token LT and one forget token UT.
// Both are inserted after CLS before the first encoder layer and re-inserted
// before every later layer, replacing whatever the previous layer produced
// in those two rows. The classifier reads the final CLS, LT and UT rows.
//
// In plain mode (prompts == false) the same backbone runs without keys and
// the classifier reads CLS only; that is the conventional model used by the
// logit-masking baseline.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "novo/batch_protocol.hpp"
#include "novo/rng.hpp"
#include "novo/tensor.hpp"

namespace novo {

struct ModelConfig {
  std::size_t image_height = 16;
  std::size_t image_width = 16;
  std::size_t channels = 3;
  std::size_t patch = 4;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t layers = 4;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 8;
  bool prompts = true;

  std::size_t patch_count() const { return (image_height / patch) * (image_width / patch); }
  std::size_t patch_pixels() const { return patch * patch * channels; }
  // CLS + LT + UT + patches (or CLS + patches in plain mode).
  std::size_t token_count() const { return patch_count() + (prompts ? 3 : 1); }
  std::size_t key_hidden() const { return 4 * num_classes; }
  std::size_t key_width() const { return dim / 2; }

  // Throws ConfigError on an indivisible patch grid or inconsistent sizes.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct NamedTensor {
  std::string name;
  BasicTensor<T> tensor;
};

template <typename T>
struct Linear {
  BasicTensor<T> weight;  // [in, out]
  BasicTensor<T> bias;    // [out]

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return add_row(matmul(x, weight), bias); }
};

template <typename T>
struct Norm {
  BasicTensor<T> gain;
  BasicTensor<T> bias;
};

template <typename T>
struct EncoderLayer {
  Norm<T> norm1;
  Linear<T> qkv;
  Linear<T> proj;
  Norm<T> norm2;
  Linear<T> fc1;
  Linear<T> fc2;
};

template <typename T>
struct EncoderParams {
  Linear<T> patch_embed;
  BasicTensor<T> cls_token;  // [1, d]
  BasicTensor<T> pos_embed;  // [patches, d]; added to patch tokens only
  std::vector<EncoderLayer<T>> layers;
  Norm<T> final_norm;
  Linear<T> classifier;  // [3d, C] with prompts, [d, C] in plain mode
};

template <typename T>
struct PromptKeys {
  Linear<T> ltn_in, ltn_out;    // retain token network
  Linear<T> ultn_in, ultn_out;  // forget token network
  Linear<T> pn_retain;          // projection for LT
  Linear<T> pn_forget;          // projection for UT
  // Frozen, zero after training. Sealing sets the bits of permanently
  // withdrawn classes so they are OR-ed into every U.
  BasicTensor<T> u_h;  // [C]
};

template <typename T>
struct ForwardTrace {
  std::vector<BasicTensor<T>> hidden;  // H_l after each layer, [B, tokens, d]; filled on request
  BasicTensor<T> final_tokens;         // final-normed H_L, [B, tokens, d]
  BasicTensor<T> logits;               // [B, C]
  std::size_t token_count = 0;
};

enum class FeatureToken { kCls, kRetain, kForget };
FeatureToken parse_feature_token(const std::string& name);  // CLS | LT | UT

template <typename T>
class BasicNovoModel {
 public:
  BasicNovoModel(const ModelConfig& config, Rng& init_rng);

  // Rebuilds a model from named tensors (checkpoint load). Every expected
  // name must be present with the right shape.
  static BasicNovoModel from_state(const ModelConfig& config, const std::vector<NamedTensor<T>>& state);

  const ModelConfig& config() const { return config_; }
  EncoderParams<T>& encoder() { return encoder_; }
  const EncoderParams<T>& encoder() const { return encoder_; }
  PromptKeys<T>& keys() { return keys_; }
  const PromptKeys<T>& keys() const { return keys_; }

  // Optimizer-visible parameters: the backbone plus the key networks.
  std::vector<NamedTensor<T>> trainable() const;
  // Everything persisted in a checkpoint (trainable + u_h).
  std::vector<NamedTensor<T>> state() const;
  std::size_t parameter_count() const;
  std::size_t prompt_parameter_count() const;

  // (LT, UT), each [1, d].
  std::pair<BasicTensor<T>, BasicTensor<T>> make_prompts(const MultiHotClassSet& A,
                                                         const MultiHotClassSet& U) const;

  // images: [B, H, W, channels]. A and U are ignored in plain mode.
  ForwardTrace<T> forward(const BasicTensor<T>& images, const MultiHotClassSet& A,
                          const MultiHotClassSet& U, bool keep_hidden = false) const;
  BasicTensor<T> logits(const BasicTensor<T>& images, const MultiHotClassSet& A,
                        const MultiHotClassSet& U) const;
  // Final-layer row of the chosen token, [B, d].
  BasicTensor<T> extract_features(const BasicTensor<T>& images, const MultiHotClassSet& A,
                                  const MultiHotClassSet& U, FeatureToken which) const;

  // Deep copy with values converted to another scalar type.
  template <typename U>
  BasicNovoModel<U> cast(bool requires_grad = true) const {
    std::vector<NamedTensor<U>> converted;
    for (const auto& p : state()) {
      const bool trainable_param = p.name != "keys.u_h";
      converted.push_back({p.name, tensor_cast<U>(p.tensor, requires_grad && trainable_param)});
    }
    return BasicNovoModel<U>::from_state(config_, converted);
  }

  BasicNovoModel clone() const { return cast<T>(true); }

 private:
  explicit BasicNovoModel(const ModelConfig& config) : config_(config) {}
  BasicTensor<T> attention(const BasicTensor<T>& x, const EncoderLayer<T>& layer, std::size_t batch) const;
  BasicTensor<T> block(const BasicTensor<T>& h, const EncoderLayer<T>& layer, std::size_t batch) const;
  std::vector<NamedTensor<T>> named(bool include_buffers) const;

  ModelConfig config_;
  EncoderParams<T> encoder_;
  PromptKeys<T> keys_;
};

using NovoModel = BasicNovoModel<float>;
using NovoModel64 = BasicNovoModel<double>;

// Cuts [B, H, W, C] images into row-major [B * patches, patch * patch * C]
// rows; pixel order inside a patch is (row, column, channel).
template <typename T>
BasicTensor<T> patchify(const BasicTensor<T>& images, std::size_t patch);

// Multi-hot vector as a [1, C] constant tensor.
template <typename T>
BasicTensor<T> as_row(const MultiHotClassSet& set);

}  // namespace novo
