#include "novo/model.hpp"

#include <cmath>
#include <map>

#include "novo/errors.hpp"

namespace novo {

void ModelConfig::validate() const {
  if (patch == 0 || image_height % patch != 0 || image_width % patch != 0) {
    throw ConfigError("image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                      " is not divisible into " + std::to_string(patch) + "x" + std::to_string(patch) +
                      " patches");
  }
  if (channels == 0 || dim == 0 || layers == 0 || mlp_ratio == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (num_classes < 2) throw ConfigError("need at least 2 classes");
  if (prompts && dim < 2) throw ConfigError("dim too small for prompt keys");
}

FeatureToken parse_feature_token(const std::string& name) {
  if (name == "CLS") return FeatureToken::kCls;
  if (name == "LT") return FeatureToken::kRetain;
  if (name == "UT") return FeatureToken::kForget;
  throw ConfigError("unknown feature token '" + name + "' (CLS|LT|UT)");
}

namespace {

constexpr double kNormEps = 1e-5;

template <typename T>
Linear<T> init_linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> w(in * out);
  for (auto& v : w) v = static_cast<T>(dist(rng));
  return {BasicTensor<T>({in, out}, std::move(w), true), BasicTensor<T>::zeros({out}, true)};
}

template <typename T>
Norm<T> init_norm(std::size_t n) {
  return {BasicTensor<T>::full({n}, T(1), true), BasicTensor<T>::zeros({n}, true)};
}

template <typename T>
BasicTensor<T> init_normal(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return BasicTensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
using Slot = std::pair<std::string, BasicTensor<T>*>;

template <typename T>
void add_linear(std::vector<Slot<T>>& slots, const std::string& prefix, Linear<T>& l) {
  slots.push_back({prefix + ".weight", &l.weight});
  slots.push_back({prefix + ".bias", &l.bias});
}

template <typename T>
void add_norm(std::vector<Slot<T>>& slots, const std::string& prefix, Norm<T>& n) {
  slots.push_back({prefix + ".gain", &n.gain});
  slots.push_back({prefix + ".bias", &n.bias});
}

template <typename T>
std::vector<Slot<T>> slots_of(EncoderParams<T>& enc, PromptKeys<T>& keys, bool prompts, bool buffers) {
  std::vector<Slot<T>> s;
  add_linear(s, "encoder.patch_embed", enc.patch_embed);
  s.push_back({"encoder.cls_token", &enc.cls_token});
  s.push_back({"encoder.pos_embed", &enc.pos_embed});
  for (std::size_t i = 0; i < enc.layers.size(); ++i) {
    const std::string p = "encoder.layers." + std::to_string(i);
    auto& layer = enc.layers[i];
    add_norm(s, p + ".norm1", layer.norm1);
    add_linear(s, p + ".qkv", layer.qkv);
    add_linear(s, p + ".proj", layer.proj);
    add_norm(s, p + ".norm2", layer.norm2);
    add_linear(s, p + ".fc1", layer.fc1);
    add_linear(s, p + ".fc2", layer.fc2);
  }
  add_norm(s, "encoder.final_norm", enc.final_norm);
  add_linear(s, "encoder.classifier", enc.classifier);
  if (prompts) {
    add_linear(s, "keys.ltn_in", keys.ltn_in);
    add_linear(s, "keys.ltn_out", keys.ltn_out);
    add_linear(s, "keys.ultn_in", keys.ultn_in);
    add_linear(s, "keys.ultn_out", keys.ultn_out);
    add_linear(s, "keys.pn_retain", keys.pn_retain);
    add_linear(s, "keys.pn_forget", keys.pn_forget);
    if (buffers) s.push_back({"keys.u_h", &keys.u_h});
  }
  return s;
}

template <typename T>
void require_length(const char* what, const MultiHotClassSet& set, std::size_t n) {
  if (set.size() != n) {
    throw DimensionError(std::string(what) + " has length " + std::to_string(set.size()) + ", expected " +
                         std::to_string(n));
  }
}

}  // namespace

template <typename T>
BasicTensor<T> as_row(const MultiHotClassSet& set) {
  std::vector<T> v(set.bits().begin(), set.bits().end());
  return BasicTensor<T>({1, set.size()}, std::move(v));
}

template <typename T>
BasicTensor<T> patchify(const BasicTensor<T>& images, std::size_t patch) {
  if (images.rank() != 4) throw DimensionError("patchify: expected [B,H,W,C], got " + shape_str(images.shape()));
  const std::size_t b = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
  if (patch == 0 || h % patch || w % patch) {
    throw ConfigError("patchify: " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by patch " +
                      std::to_string(patch));
  }
  const std::size_t gh = h / patch, gw = w / patch, row = patch * patch * c;
  std::vector<T> out(images.numel());
  const auto src = images.values();
  std::size_t o = 0;
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t py = 0; py < gh; ++py) {
      for (std::size_t px = 0; px < gw; ++px) {
        for (std::size_t y = 0; y < patch; ++y) {
          const std::size_t base = ((n * h + py * patch + y) * w + px * patch) * c;
          std::copy_n(src.data() + base, patch * c, out.data() + o);
          o += patch * c;
        }
      }
    }
  }
  return BasicTensor<T>({b * gh * gw, row}, std::move(out));
}

template <typename T>
BasicNovoModel<T>::BasicNovoModel(const ModelConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t d = config_.dim, c = config_.num_classes;
  encoder_.patch_embed = init_linear<T>(config_.patch_pixels(), d, rng);
  encoder_.cls_token = init_normal<T>({1, d}, 0.02, rng);
  encoder_.pos_embed = init_normal<T>({config_.patch_count(), d}, 0.02, rng);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    EncoderLayer<T> layer;
    layer.norm1 = init_norm<T>(d);
    layer.qkv = init_linear<T>(d, 3 * d, rng);
    layer.proj = init_linear<T>(d, d, rng);
    layer.norm2 = init_norm<T>(d);
    layer.fc1 = init_linear<T>(d, config_.mlp_ratio * d, rng);
    layer.fc2 = init_linear<T>(config_.mlp_ratio * d, d, rng);
    encoder_.layers.push_back(std::move(layer));
  }
  encoder_.final_norm = init_norm<T>(d);
  encoder_.classifier = init_linear<T>((config_.prompts ? 3 : 1) * d, c, rng);
  if (config_.prompts) {
    const std::size_t hidden = config_.key_hidden(), width = config_.key_width();
    keys_.ltn_in = init_linear<T>(c, hidden, rng);
    keys_.ltn_out = init_linear<T>(hidden, width, rng);
    keys_.ultn_in = init_linear<T>(c, hidden, rng);
    keys_.ultn_out = init_linear<T>(hidden, width, rng);
    keys_.pn_retain = init_linear<T>(width, d, rng);
    keys_.pn_forget = init_linear<T>(width, d, rng);
    keys_.u_h = BasicTensor<T>::zeros({c}, false);
  }
}

template <typename T>
BasicNovoModel<T> BasicNovoModel<T>::from_state(const ModelConfig& config,
                                                const std::vector<NamedTensor<T>>& state) {
  Rng scratch(0);
  BasicNovoModel model(config, scratch);
  std::map<std::string, const BasicTensor<T>*> by_name;
  for (const auto& p : state) by_name[p.name] = &p.tensor;
  for (auto& [name, slot] : slots_of(model.encoder_, model.keys_, config.prompts, true)) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("model state is missing tensor '" + name + "'");
    if (it->second->shape() != slot->shape()) {
      throw DimensionError("tensor '" + name + "' has shape " + shape_str(it->second->shape()) + ", expected " +
                           shape_str(slot->shape()));
    }
    *slot = *it->second;
  }
  return model;
}

template <typename T>
std::vector<NamedTensor<T>> BasicNovoModel<T>::named(bool include_buffers) const {
  auto& self = const_cast<BasicNovoModel&>(*this);
  std::vector<NamedTensor<T>> out;
  for (auto& [name, slot] : slots_of(self.encoder_, self.keys_, config_.prompts, include_buffers)) {
    out.push_back({name, *slot});
  }
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> BasicNovoModel<T>::trainable() const {
  return named(false);
}

template <typename T>
std::vector<NamedTensor<T>> BasicNovoModel<T>::state() const {
  return named(true);
}

template <typename T>
std::size_t BasicNovoModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : trainable()) n += p.tensor.numel();
  return n;
}

template <typename T>
std::size_t BasicNovoModel<T>::prompt_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : trainable()) {
    if (p.name.rfind("keys.", 0) == 0) n += p.tensor.numel();
  }
  return n;
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> BasicNovoModel<T>::make_prompts(const MultiHotClassSet& A,
                                                                         const MultiHotClassSet& U) const {
  if (!config_.prompts) throw ContractError("make_prompts on a plain (prompt-free) model");
  const std::size_t c = config_.num_classes;
  require_length<T>("A", A, c);
  require_length<T>("U", U, c);
  std::vector<std::uint8_t> hold(c);
  for (std::size_t i = 0; i < c; ++i) hold[i] = keys_.u_h[i] > T(0.5) ? 1 : 0;
  const MultiHotClassSet forget = bitwise_or(MultiHotClassSet(std::move(hold)), U);

  auto lt = keys_.pn_retain(keys_.ltn_out(gelu(keys_.ltn_in(as_row<T>(A)))));
  auto ut = keys_.pn_forget(keys_.ultn_out(gelu(keys_.ultn_in(as_row<T>(forget)))));
  return {lt, ut};
}

template <typename T>
BasicTensor<T> BasicNovoModel<T>::attention(const BasicTensor<T>& x, const EncoderLayer<T>& layer,
                                            std::size_t batch) const {
  const std::size_t d = config_.dim, heads = config_.heads, dh = d / heads;
  const std::size_t tokens = x.dim(0) / batch;
  auto qkv = reshape(layer.qkv(x), {batch, tokens, 3, heads, dh});
  qkv = reshape(permute(qkv, {2, 0, 3, 1, 4}), {3, batch * heads, tokens, dh});
  auto part = [&](std::size_t i) { return reshape(slice(qkv, 0, i, i + 1), {batch * heads, tokens, dh}); };
  const auto q = part(0), k = part(1), v = part(2);
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
  const auto weights = softmax(scale(bmm(q, transpose(k)), inv_sqrt_dh), 2);
  auto ctx = reshape(bmm(weights, v), {batch, heads, tokens, dh});
  ctx = reshape(permute(ctx, {0, 2, 1, 3}), {batch * tokens, d});
  return layer.proj(ctx);
}

template <typename T>
BasicTensor<T> BasicNovoModel<T>::block(const BasicTensor<T>& h, const EncoderLayer<T>& layer,
                                        std::size_t batch) const {
  const Shape shape = h.shape();
  const auto x = reshape(h, {shape[0] * shape[1], shape[2]});
  const auto eps = static_cast<T>(kNormEps);
  const auto h1 = add(x, attention(layer_norm(x, layer.norm1.gain, layer.norm1.bias, eps), layer, batch));
  const auto m = layer.fc2(gelu(layer.fc1(layer_norm(h1, layer.norm2.gain, layer.norm2.bias, eps))));
  return reshape(add(h1, m), shape);
}

template <typename T>
ForwardTrace<T> BasicNovoModel<T>::forward(const BasicTensor<T>& images, const MultiHotClassSet& A,
                                           const MultiHotClassSet& U, bool keep_hidden) const {
  if (images.rank() != 4 || images.dim(1) != config_.image_height || images.dim(2) != config_.image_width ||
      images.dim(3) != config_.channels) {
    throw DimensionError("images " + shape_str(images.shape()) + " do not match model input [B," +
                         std::to_string(config_.image_height) + "," + std::to_string(config_.image_width) +
                         "," + std::to_string(config_.channels) + "]");
  }
  const std::size_t b = images.dim(0), patches = config_.patch_count(), d = config_.dim;
  const std::size_t tokens = config_.token_count();

  auto tok = encoder_.patch_embed(patchify(images, config_.patch));
  std::vector<std::size_t> positions(b * patches);
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i % patches;
  tok = reshape(add(tok, embedding_lookup(encoder_.pos_embed, std::span<const std::size_t>(positions))),
                {b, patches, d});
  const auto cls = repeat(encoder_.cls_token, b);

  ForwardTrace<T> trace;
  trace.token_count = tokens;
  BasicTensor<T> h, lt, ut;
  if (config_.prompts) {
    auto [lt_row, ut_row] = make_prompts(A, U);
    lt = repeat(lt_row, b);
    ut = repeat(ut_row, b);
    h = concat<T>({cls, lt, ut, tok}, 1);
  } else {
    h = concat<T>({cls, tok}, 1);
  }
  for (std::size_t l = 0; l < encoder_.layers.size(); ++l) {
    if (l > 0 && config_.prompts) {
      h = concat<T>({slice(h, 1, 0, 1), lt, ut, slice(h, 1, 3, tokens)}, 1);
    }
    h = block(h, encoder_.layers[l], b);
    if (keep_hidden) trace.hidden.push_back(h);
  }
  trace.final_tokens = layer_norm(h, encoder_.final_norm.gain, encoder_.final_norm.bias, static_cast<T>(kNormEps));
  const std::size_t head_rows = config_.prompts ? 3 : 1;
  const auto head_in = reshape(slice(trace.final_tokens, 1, 0, head_rows), {b, head_rows * d});
  trace.logits = encoder_.classifier(head_in);
  return trace;
}

template <typename T>
BasicTensor<T> BasicNovoModel<T>::logits(const BasicTensor<T>& images, const MultiHotClassSet& A,
                                         const MultiHotClassSet& U) const {
  return forward(images, A, U).logits;
}

template <typename T>
BasicTensor<T> BasicNovoModel<T>::extract_features(const BasicTensor<T>& images, const MultiHotClassSet& A,
                                                   const MultiHotClassSet& U, FeatureToken which) const {
  std::size_t row = 0;
  if (which != FeatureToken::kCls) {
    if (!config_.prompts) throw ConfigError("plain model has no LT/UT tokens");
    row = which == FeatureToken::kRetain ? 1 : 2;
  }
  const auto trace = forward(images, A, U);
  return reshape(slice(trace.final_tokens, 1, row, row + 1), {images.dim(0), config_.dim});
}

template class BasicNovoModel<float>;
template class BasicNovoModel<double>;
template BasicTensor<float> patchify(const BasicTensor<float>&, std::size_t);
template BasicTensor<double> patchify(const BasicTensor<double>&, std::size_t);
template BasicTensor<float> as_row(const MultiHotClassSet&);
template BasicTensor<double> as_row(const MultiHotClassSet&);

}  // namespace novo
