#include "novo/config.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "novo/binary_io.hpp"
#include "novo/errors.hpp"

namespace novo {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(out)) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

std::string number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (!(inverse_eps > 0)) throw ConfigError("inverse_eps must be > 0");
  if (clip_norm < 0) throw ConfigError("clip_norm must be >= 0 (0 disables clipping)");
  if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("test_fraction must be in (0, 1)");
  weights.validate();
}

void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
  auto& m = c.model;
  if (key == "epochs") c.epochs = to_uint(key, value);
  else if (key == "batch_size") c.batch_size = to_uint(key, value);
  else if (key == "learning_rate") c.learning_rate = to_double(key, value);
  else if (key == "optimizer") {
    if (value == "adam") c.optimizer = OptimizerKind::kAdam;
    else if (value == "sgd") c.optimizer = OptimizerKind::kSgd;
    else throw ConfigError("key 'optimizer': expected adam|sgd, got '" + value + "'");
  } else if (key == "weight_decay") c.weight_decay = to_double(key, value);
  else if (key == "beta") c.weights.beta = to_double(key, value);
  else if (key == "gamma") c.weights.gamma = to_double(key, value);
  else if (key == "tau") c.weights.tau = to_double(key, value);
  else if (key == "inverse_eps") c.inverse_eps = to_double(key, value);
  else if (key == "clip_norm") c.clip_norm = to_double(key, value);
  else if (key == "drop_expand") c.drop_expand = parse_drop_expand(value);
  else if (key == "seed") c.seed = to_uint(key, value);
  else if (key == "test_fraction") c.test_fraction = to_double(key, value);
  else if (key == "mode") {
    if (value == "novo") m.prompts = true;
    else if (value == "plain") m.prompts = false;
    else throw ConfigError("key 'mode': expected novo|plain, got '" + value + "'");
  } else if (key == "image_height") m.image_height = to_uint(key, value);
  else if (key == "image_width") m.image_width = to_uint(key, value);
  else if (key == "channels") m.channels = to_uint(key, value);
  else if (key == "patch") m.patch = to_uint(key, value);
  else if (key == "dim") m.dim = to_uint(key, value);
  else if (key == "heads") m.heads = to_uint(key, value);
  else if (key == "layers") m.layers = to_uint(key, value);
  else if (key == "mlp_ratio") m.mlp_ratio = to_uint(key, value);
  else if (key == "num_classes") m.num_classes = to_uint(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

TrainConfig parse_config(std::string_view text, TrainConfig base) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    std::string_view line = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = trim(line);
    if (!body.empty()) {
      const auto eq = body.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" + body + "'");
      }
      const std::string key = trim(std::string_view(body).substr(0, eq));
      const std::string value = trim(std::string_view(body).substr(eq + 1));
      try {
        set_config_value(base, key, value);
      } catch (const ConfigError& e) {
        throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  const auto bytes = read_file(path);
  return parse_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), base);
}

std::string format_config(const TrainConfig& c) {
  const auto& m = c.model;
  std::ostringstream os;
  os << "mode = " << (m.prompts ? "novo" : "plain") << '\n'
     << "epochs = " << c.epochs << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "learning_rate = " << number(c.learning_rate) << '\n'
     << "optimizer = " << (c.optimizer == OptimizerKind::kAdam ? "adam" : "sgd") << '\n'
     << "weight_decay = " << number(c.weight_decay) << '\n'
     << "beta = " << number(c.weights.beta) << '\n'
     << "gamma = " << number(c.weights.gamma) << '\n'
     << "tau = " << number(c.weights.tau) << '\n'
     << "inverse_eps = " << number(c.inverse_eps) << '\n'
     << "clip_norm = " << number(c.clip_norm) << '\n'
     << "drop_expand = " << to_string(c.drop_expand) << '\n'
     << "seed = " << c.seed << '\n'
     << "test_fraction = " << number(c.test_fraction) << '\n'
     << "image_height = " << m.image_height << '\n'
     << "image_width = " << m.image_width << '\n'
     << "channels = " << m.channels << '\n'
     << "patch = " << m.patch << '\n'
     << "dim = " << m.dim << '\n'
     << "heads = " << m.heads << '\n'
     << "layers = " << m.layers << '\n'
     << "mlp_ratio = " << m.mlp_ratio << '\n'
     << "num_classes = " << m.num_classes << '\n';
  return os.str();
}

}  // namespace novo
