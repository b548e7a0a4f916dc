#include "novo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "novo/errors.hpp"
#include "novo/objectives.hpp"

namespace novo {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr double kSgdMomentum = 0.9;

std::string slot_prefix(OptimizerKind kind, bool second) {
  if (kind == OptimizerKind::kSgd) return "sgd.v/";
  return second ? "adam.v/" : "adam.m/";
}

std::uint64_t steps_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

void audit_frozen(const NovoModel& model, const Optimizer& opt) {
  if (model.config().prompts) {
    for (float v : model.keys().u_h.values()) {
      if (v != 0.0f) throw ContractError("frozen-parameter audit: u_h changed during training");
    }
  }
  const auto expected = model.trainable();
  const auto& actual = opt.params();
  bool ok = expected.size() == actual.size();
  for (std::size_t i = 0; ok && i < expected.size(); ++i) {
    ok = expected[i].name == actual[i].name && expected[i].tensor.same_storage(actual[i].tensor);
  }
  if (!ok) throw ContractError("frozen-parameter audit: optimizer parameter set differs from the model's");
}

Checkpoint run_epochs(const TrainConfig& config, const LabeledDataset& data, NovoModel model, Optimizer opt,
                      Rng rng, std::size_t start_epoch, const TrainOptions& options,
                      std::vector<EpochMetrics>& log) {
  if (data.class_count != config.model.num_classes) {
    throw ConfigError("dataset has " + std::to_string(data.class_count) + " classes, model expects " +
                      std::to_string(config.model.num_classes));
  }
  if (data.height != config.model.image_height || data.width != config.model.image_width ||
      data.channels != config.model.channels) {
    throw ConfigError("dataset image shape does not match the model config");
  }
  if (data.size() == 0) throw ConfigError("empty training set");

  const std::size_t n = data.size(), classes = config.model.num_classes;
  const std::uint64_t total_steps = config.epochs * steps_per_epoch(n, config.batch_size);
  const std::size_t last_epoch = std::min(config.epochs, options.stop_after_epoch.value_or(config.epochs));
  const MultiHotClassSet all = complement(multi_hot({}, classes));
  const MultiHotClassSet none = multi_hot({}, classes);

  for (std::size_t epoch = start_epoch + 1; epoch <= last_epoch; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    // l_ce is weighted by retained samples, the other terms by batch.
    double sum_ce = 0, sum_u = 0, sum_i = 0, sum_total = 0;
    std::size_t batches = 0, retain_seen = 0, retain_correct = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(config.batch_size, n - start));
      const auto images = data.batch(idx);
      const auto labels = data.labels_of(idx);
      MultiHotClassSet A = all, U = none;
      if (config.model.prompts) {
        const auto plan = drop_and_expand(ClassSet(labels.begin(), labels.end()), classes, rng, config.drop_expand);
        A = plan.A;
        U = plan.U;
      }

      auto snapshot = [&] {
        if (options.nan_snapshot.empty()) return;
        save_checkpoint(Checkpoint{config, model.clone(), opt.state(), epoch - 1, rng_state(rng), false, {}},
                        options.nan_snapshot);
      };
      Tape tape;
      LossTerms<float> terms;
      Tensor logits;
      try {
        TapeScope<float> scope(tape);
        logits = model.logits(images, A, U);
        terms = compute_losses(logits, labels, A, U, config.weights, static_cast<float>(config.inverse_eps));
        if (!std::isfinite(terms.total.item())) {
          std::ostringstream os;
          os << "non-finite loss at epoch " << epoch << ", batch " << batches << ": l_ce=" << terms.l_ce.item()
             << " l_u=" << terms.l_u.item() << " l_i=" << terms.l_i.item() << " A=" << A.str() << " U=" << U.str();
          throw NumericError(os.str());
        }
        if (terms.total.requires_grad()) tape.backward(terms.total);
        opt.step(cosine_lr(config.learning_rate, opt.step_count(), total_steps));
      } catch (const NumericError&) {
        // Weights are as they were before the failing batch.
        snapshot();
        throw;
      }
      sum_ce += terms.l_ce.item() * static_cast<double>(terms.n_retain);
      sum_u += terms.l_u.item();
      sum_i += terms.l_i.item();
      sum_total += terms.total.item();
      ++batches;
      for (std::size_t r = 0; r < labels.size(); ++r) {
        if (!A.test(labels[r])) continue;
        const auto row = logits.values().subspan(r * classes, classes);
        const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        ++retain_seen;
        retain_correct += pred == labels[r] ? 1 : 0;
      }
    }
    audit_frozen(model, opt);

    EpochMetrics m;
    m.epoch = epoch;
    m.l_ce = retain_seen ? sum_ce / static_cast<double>(retain_seen) : 0.0;
    m.l_u = sum_u / static_cast<double>(batches);
    m.l_i = sum_i / static_cast<double>(batches);
    m.total = sum_total / static_cast<double>(batches);
    m.acc_retain_train =
        retain_seen ? 100.0 * static_cast<double>(retain_correct) / static_cast<double>(retain_seen) : 0.0;
    log.push_back(m);
    if (options.on_epoch) options.on_epoch(m, model);
    start_epoch = epoch;
  }
  return Checkpoint{config, std::move(model), opt.state(), start_epoch, rng_state(rng), false, {}};
}

}  // namespace

double cosine_lr(double base_lr, std::uint64_t step, std::uint64_t total_steps) {
  if (total_steps == 0) return base_lr;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

Optimizer::Optimizer(const TrainConfig& config, std::vector<NamedTensor<float>> params)
    : config_(config), params_(std::move(params)) {
  for (const auto& p : params_) {
    if (p.name == "keys.u_h") throw ContractError("u_h is frozen and cannot be optimized");
    m_.emplace_back(p.tensor.numel(), 0.0f);
    v_.emplace_back(p.tensor.numel(), 0.0f);
  }
}

Optimizer::Optimizer(const TrainConfig& config, std::vector<NamedTensor<float>> params, const OptimizerState& state)
    : Optimizer(config, std::move(params)) {
  step_ = state.step;
  for (const auto& slot : state.slots) {
    const auto slash = slot.name.find('/');
    const std::string prefix = slot.name.substr(0, slash + 1), name = slot.name.substr(slash + 1);
    const auto it = std::find_if(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
    if (it == params_.end()) throw ConfigError("optimizer state for unknown parameter '" + name + "'");
    const auto i = static_cast<std::size_t>(it - params_.begin());
    if (slot.tensor.numel() != m_[i].size()) throw DimensionError("optimizer state size mismatch for '" + name + "'");
    const auto vals = slot.tensor.values();
    if (prefix == slot_prefix(config.optimizer, false)) m_[i].assign(vals.begin(), vals.end());
    else if (prefix == slot_prefix(config.optimizer, true)) v_[i].assign(vals.begin(), vals.end());
    else throw ConfigError("optimizer state slot '" + slot.name + "' does not match the configured optimizer");
  }
}

double Optimizer::step(double lr) {
  double sq = 0;
  for (const auto& p : params_) {
    for (float g : p.tensor.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  const double clip = (config_.clip_norm > 0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;

  ++step_;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].tensor;
    const auto grad = p.grad();
    auto w = p.mutable_values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j] * clip;
      double update;
      if (config_.optimizer == OptimizerKind::kAdam) {
        m[j] = static_cast<float>(kAdamBeta1 * m[j] + (1 - kAdamBeta1) * g);
        v[j] = static_cast<float>(kAdamBeta2 * v[j] + (1 - kAdamBeta2) * g * g);
        update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + kAdamEps);
      } else {
        m[j] = static_cast<float>(kSgdMomentum * m[j] + g);
        update = m[j];
      }
      w[j] = static_cast<float>(w[j] - lr * (update + config_.weight_decay * w[j]));
    }
    p.zero_grad();
  }
  return norm;
}

OptimizerState Optimizer::state() const {
  OptimizerState s;
  s.step = step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& shape = params_[i].tensor.shape();
    s.slots.push_back({slot_prefix(config_.optimizer, false) + params_[i].name, Tensor(shape, m_[i])});
    if (config_.optimizer == OptimizerKind::kAdam) {
      s.slots.push_back({slot_prefix(config_.optimizer, true) + params_[i].name, Tensor(shape, v_[i])});
    }
  }
  return s;
}

TrainResult train(const TrainConfig& config, const LabeledDataset& train_set, const TrainOptions& options) {
  config.validate();
  Rng init_rng = derive_rng(config.seed, 10);
  NovoModel model(config.model, init_rng);
  Optimizer opt(config, model.trainable());
  TrainResult result{Checkpoint{config, model, opt.state(), 0, {}, false, {}}, {}};
  result.checkpoint = run_epochs(config, train_set, model, std::move(opt), derive_rng(config.seed, 11), 0, options,
                                 result.log);
  return result;
}

TrainResult resume(const Checkpoint& checkpoint, const LabeledDataset& train_set, const TrainOptions& options) {
  if (checkpoint.sealed) throw ContractError("cannot resume training from a sealed checkpoint");
  const auto& config = checkpoint.config;
  config.validate();
  NovoModel model = checkpoint.model.clone();
  Optimizer opt(config, model.trainable(), checkpoint.optimizer);
  Rng rng;
  restore_rng_state(rng, checkpoint.rng_state);
  TrainResult result{Checkpoint{config, model, opt.state(), checkpoint.epoch, {}, false, {}}, {}};
  result.checkpoint = run_epochs(config, train_set, model, std::move(opt), rng, checkpoint.epoch, options, result.log);
  return result;
}

void write_metrics_csv(const std::vector<EpochMetrics>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.precision(9);
  out << "epoch,l_ce,l_u,l_i,total,acc_retain_train\n";
  for (const auto& m : log) {
    out << m.epoch << ',' << m.l_ce << ',' << m.l_u << ',' << m.l_i << ',' << m.total << ',' << m.acc_retain_train
        << '\n';
  }
}

}  // namespace novo
