#include "novo/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "novo/errors.hpp"
#include "novo/rng.hpp"

namespace novo {

namespace {

constexpr std::uint64_t kMiaStream = 20;

std::size_t argmax_row(std::span<const float> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

std::optional<double> percent(std::size_t hit, std::size_t total) {
  if (total == 0) return std::nullopt;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(total);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.precision(9);
  return out;
}

template <typename F>
Tensor batched(const LabeledDataset& data, std::size_t batch_size, std::size_t width, F&& fn) {
  std::vector<float> out;
  out.reserve(data.size() * width);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.resize(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor part = fn(data.batch(idx));
    out.insert(out.end(), part.values().begin(), part.values().end());
  }
  return Tensor({data.size(), width}, std::move(out));
}

// Row-wise log-softmax of one logit row in double.
std::vector<double> log_softmax(std::span<const float> row) {
  double mx = -std::numeric_limits<double>::infinity();
  for (float v : row) mx = std::max(mx, static_cast<double>(v));
  double z = 0;
  for (float v : row) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - lz;
  return out;
}

void fmt_opt(std::ostream& os, const std::optional<double>& v) {
  if (v) os << *v;
}

}  // namespace

std::optional<double> EvalReport::overall() const {
  std::size_t hit = 0, total = 0;
  for (std::size_t c = 0; c < confusion.size(); ++c) {
    hit += confusion[c][c];
    total += std::accumulate(confusion[c].begin(), confusion[c].end(), std::size_t{0});
  }
  return percent(hit, total);
}

EvalReport report_from_logits(const Tensor& logits, std::span<const std::size_t> labels, const ClassSet& withdrawn) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("logits " + shape_str(logits.shape()) + " do not match " + std::to_string(labels.size()) +
                         " labels");
  }
  const std::size_t c = logits.dim(1);
  EvalReport r;
  r.num_classes = c;
  r.withdrawn = withdrawn;
  r.confusion.assign(c, std::vector<std::size_t>(c, 0));
  std::size_t hit_r = 0, hit_f = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = labels[i];
    if (y >= c) throw IndexError("label " + std::to_string(y) + " outside " + std::to_string(c) + " classes");
    const auto pred = argmax_row(logits.values().subspan(i * c, c));
    ++r.confusion[y][pred];
    if (withdrawn.count(y)) {
      ++r.n_forget;
      hit_f += pred == y;
    } else {
      ++r.n_retain;
      hit_r += pred == y;
    }
  }
  r.acc_retain = percent(hit_r, r.n_retain);
  r.acc_forget = percent(hit_f, r.n_forget);
  for (std::size_t k = 0; k < c; ++k) {
    r.per_class.push_back(
        percent(r.confusion[k][k], std::accumulate(r.confusion[k].begin(), r.confusion[k].end(), std::size_t{0})));
  }
  return r;
}

Tensor dataset_logits(const NovoModel& model, const LabeledDataset& data, const KeyState& state,
                      std::size_t batch_size) {
  return batched(data, batch_size, model.config().num_classes,
                 [&](const Tensor& images) { return keyed_logits(model, images, state); });
}

EvalReport evaluate(const NovoModel& model, const KeyState& state, const LabeledDataset& test) {
  return report_from_logits(dataset_logits(model, test, state), test.labels, state.withdrawn());
}

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "metric,value\n";
  out << "acc_retain,";
  fmt_opt(out, report.acc_retain);
  out << "\nacc_forget,";
  fmt_opt(out, report.acc_forget);
  out << "\nmia,";
  fmt_opt(out, report.mia);
  out << "\nn_retain," << report.n_retain << "\nn_forget," << report.n_forget << '\n';
  for (std::size_t k = 0; k < report.per_class.size(); ++k) {
    out << "acc_class_" << k << ',';
    fmt_opt(out, report.per_class[k]);
    out << '\n';
  }
}

void write_confusion_csv(const EvalReport& report, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "true";
  for (std::size_t k = 0; k < report.num_classes; ++k) out << ",pred_" << k;
  out << '\n';
  for (std::size_t t = 0; t < report.confusion.size(); ++t) {
    out << t;
    for (auto n : report.confusion[t]) out << ',' << n;
    out << '\n';
  }
}

std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  auto show = [&](const char* name, const std::optional<double>& v) {
    os << name << '=';
    if (v) os << *v; else os << "absent";
  };
  os << "withdrawn={";
  bool first = true;
  for (auto c : report.withdrawn) {
    os << (first ? "" : ",") << c;
    first = false;
  }
  os << "} ";
  show("acc_retain", report.acc_retain);
  os << " (n=" << report.n_retain << ") ";
  show("acc_forget", report.acc_forget);
  os << " (n=" << report.n_forget << ")";
  if (report.mia) {
    os << ' ';
    show("mia", report.mia);
  }
  return os.str();
}

// ---- logistic regression ---------------------------------------------------

void LogisticRegression::fit(const std::vector<double>& rows, std::size_t features, const std::vector<int>& y,
                             const Options& options) {
  if (!options.weight_sign.empty() && options.weight_sign.size() != features) {
    throw DimensionError("weight_sign needs one entry per feature");
  }
  if (features == 0 || rows.size() != y.size() * features) {
    throw DimensionError("attacker data holds " + std::to_string(rows.size()) + " values for " +
                         std::to_string(y.size()) + " rows of " + std::to_string(features) + " features");
  }
  const auto pos = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
  const std::size_t n = y.size();
  if (pos == 0 || pos == n) throw ContractError("logistic regression needs both classes in its training data");
  for (int v : y) {
    if (v != 0 && v != 1) throw ContractError("logistic regression labels must be 0 or 1");
  }

  features_ = features;
  mean_.assign(features, 0.0);
  scale_.assign(features, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < features; ++f) mean_[f] += rows[i * features + f];
  }
  for (auto& m : mean_) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < features; ++f) {
      const double d = rows[i * features + f] - mean_[f];
      scale_[f] += d * d;
    }
  }
  for (auto& s : scale_) {
    s = std::sqrt(s / static_cast<double>(n));
    if (!(s > 1e-12)) s = 1.0;
  }
  std::vector<double> x(rows.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < features; ++f) {
      x[i * features + f] = (rows[i * features + f] - mean_[f]) / scale_[f];
    }
  }

  // Balanced weights: each class contributes half of the total loss.
  const double w_pos = 0.5 / static_cast<double>(pos), w_neg = 0.5 / static_cast<double>(n - pos);
  w_.assign(features, 0.0);
  b_ = 0;
  std::vector<double> gw(features);
  for (std::size_t it = 0; it < options.iterations; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double z = b_;
      for (std::size_t f = 0; f < features; ++f) z += w_[f] * x[i * features + f];
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double err = (p - y[i]) * (y[i] ? w_pos : w_neg);
      for (std::size_t f = 0; f < features; ++f) gw[f] += err * x[i * features + f];
      gb += err;
    }
    for (std::size_t f = 0; f < features; ++f) {
      w_[f] -= options.learning_rate * (gw[f] + options.l2 * w_[f]);
      const int sign = f < options.weight_sign.size() ? options.weight_sign[f] : 0;
      if (sign < 0) w_[f] = std::min(w_[f], 0.0);
      if (sign > 0) w_[f] = std::max(w_[f], 0.0);
    }
    b_ -= options.learning_rate * gb;
  }
}

double LogisticRegression::probability(std::span<const double> row) const {
  if (row.size() != features_) throw DimensionError("attacker row has " + std::to_string(row.size()) + " features");
  double z = b_;
  for (std::size_t f = 0; f < features_; ++f) {
    const double v = std::isfinite(row[f]) ? row[f] : std::copysign(1e300, row[f]);
    z += w_[f] * (v - mean_[f]) / scale_[f];
  }
  return 1.0 / (1.0 + std::exp(-z));
}

int LogisticRegression::classify(std::span<const double> row) const {
  const double p = probability(row);
  if (std::all_of(w_.begin(), w_.end(), [](double w) { return w == 0.0; })) return 0;
  return p >= 0.5 ? 1 : 0;
}

double LogisticRegression::accuracy(const std::vector<double>& rows, const std::vector<int>& y) const {
  if (y.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    hit += classify(std::span<const double>(rows).subspan(i * features_, features_)) == y[i];
  }
  return 100.0 * static_cast<double>(hit) / static_cast<double>(y.size());
}

// ---- membership inference ----------------------------------------------------

std::vector<double> mia_features(const Tensor& logits, std::span<const std::size_t> labels, MiaFeatures kind) {
  const std::size_t c = logits.dim(1);
  const std::size_t width = kind == MiaFeatures::kLoss ? 1 : 3;
  std::vector<double> out;
  out.reserve(labels.size() * width);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = logits.values().subspan(i * c, c);
    const auto lp = log_softmax(row);
    out.push_back(-lp[labels[i]]);
    if (kind == MiaFeatures::kLossEntropyMargin) {
      double h = 0, best_other = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < c; ++k) {
        if (std::isfinite(lp[k])) h -= std::exp(lp[k]) * lp[k];
        if (k != labels[i]) best_other = std::max(best_other, static_cast<double>(row[k]));
      }
      out.push_back(h);
      out.push_back(row[labels[i]] - best_other);
    }
  }
  return out;
}

MiaResult mia_score(const NovoModel& model, const KeyState& state, const LabeledDataset& train,
                    const LabeledDataset& test, const ClassSet& forget, const MiaOptions& options) {
  const std::size_t width = options.features == MiaFeatures::kLoss ? 1 : 3;
  auto collect = [&](const LabeledDataset& data, bool want_forget) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if ((forget.count(data.labels[i]) != 0) == want_forget) idx.push_back(i);
    }
    const auto part = data.subset(idx, data.split);
    return mia_features(dataset_logits(model, part, state), part.labels, options.features);
  };
  const auto members = collect(train, false);
  const auto non_members = collect(test, false);
  const auto targets = collect(train, true);

  struct Row {
    std::size_t offset;
    const std::vector<double>* src;
    int label;
  };
  std::vector<Row> pool;
  for (std::size_t i = 0; i < members.size() / width; ++i) pool.push_back({i * width, &members, 1});
  for (std::size_t i = 0; i < non_members.size() / width; ++i) pool.push_back({i * width, &non_members, 0});
  Rng rng = derive_rng(options.seed, kMiaStream);
  std::shuffle(pool.begin(), pool.end(), rng);
  const auto n_fit = static_cast<std::size_t>(std::llround(options.attacker_train_fraction *
                                                           static_cast<double>(pool.size())));
  std::vector<double> fit_x, eval_x;
  std::vector<int> fit_y, eval_y;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    auto& x = i < n_fit ? fit_x : eval_x;
    auto& y = i < n_fit ? fit_y : eval_y;
    x.insert(x.end(), pool[i].src->begin() + static_cast<std::ptrdiff_t>(pool[i].offset),
             pool[i].src->begin() + static_cast<std::ptrdiff_t>(pool[i].offset + width));
    y.push_back(pool[i].label);
  }
  LogisticRegression attacker;
  LogisticRegression::Options fit_options;
  fit_options.weight_sign.assign(width, 0);
  fit_options.weight_sign[0] = -1;
  if (width == 3) fit_options.weight_sign[2] = 1;  // larger true-class margin only argues for membership
  attacker.fit(fit_x, width, fit_y, fit_options);

  MiaResult r;
  r.attacker_accuracy = attacker.accuracy(eval_x, eval_y);
  r.n_target = targets.size() / width;
  if (r.n_target == 0) throw ContractError("no forget-class training samples to score");
  std::size_t member = 0;
  for (std::size_t i = 0; i < r.n_target; ++i) {
    member += attacker.classify(std::span<const double>(targets).subspan(i * width, width));
  }
  r.score = 100.0 * static_cast<double>(member) / static_cast<double>(r.n_target);
  return r;
}

// ---- vicinity ----------------------------------------------------------------

std::vector<VicinityEntry> vicinity_confusion(const EvalReport& report,
                                              const std::optional<std::vector<std::vector<double>>>& similarity,
                                              double margin) {
  std::vector<VicinityEntry> out;
  for (auto cls : report.withdrawn) {
    const auto& row = report.confusion.at(cls);
    VicinityEntry e;
    e.withdrawn_class = cls;
    e.modal_class = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    const auto total = std::accumulate(row.begin(), row.end(), std::size_t{0});
    e.share = total ? static_cast<double>(row[e.modal_class]) / static_cast<double>(total) : 0.0;
    if (similarity) {
      const auto& sim = similarity->at(cls);
      std::vector<double> active_sims;
      std::optional<std::size_t> best;
      for (std::size_t k = 0; k < report.num_classes; ++k) {
        if (report.withdrawn.count(k)) continue;
        active_sims.push_back(sim.at(k));
        if (!best || sim[k] > sim[*best]) best = k;
      }
      if (best) {
        e.nearest_active = best;
        e.modal_is_nearest = e.modal_class == *best;
        std::sort(active_sims.begin(), active_sims.end());
        const std::size_t m = active_sims.size();
        const double median = m % 2 ? active_sims[m / 2] : 0.5 * (active_sims[m / 2 - 1] + active_sims[m / 2]);
        e.no_near_neighbor = sim[*best] - median < margin;
      } else {
        e.no_near_neighbor = true;
      }
    }
    out.push_back(e);
  }
  return out;
}

// ---- masking baseline ----------------------------------------------------------

Tensor mask_logits(const Tensor& logits, const ClassSet& forget) {
  const std::size_t c = logits.dim(1);
  std::vector<float> v(logits.values().begin(), logits.values().end());
  for (std::size_t i = 0; i < logits.dim(0); ++i) {
    for (auto k : forget) {
      if (k >= c) throw IndexError("class " + std::to_string(k) + " outside " + std::to_string(c) + " classes");
      v[i * c + k] = -std::numeric_limits<float>::infinity();
    }
  }
  return Tensor(logits.shape(), std::move(v));
}

EvalReport masking_baseline(const NovoModel& plain_model, const ClassSet& forget, const LabeledDataset& test) {
  if (plain_model.config().prompts) throw ContractError("masking baseline expects a plain (prompt-free) model");
  const auto state = KeyState::all_active(plain_model.config().num_classes);
  return report_from_logits(mask_logits(dataset_logits(plain_model, test, state), forget), test.labels, forget);
}

// ---- features ----------------------------------------------------------------

Tensor dataset_features(const NovoModel& model, const LabeledDataset& data, const KeyState& state,
                        FeatureToken token, std::size_t batch_size) {
  return batched(data, batch_size, model.config().dim, [&](const Tensor& images) {
    return model.extract_features(images, state.A(), state.U(), token);
  });
}

void write_features_csv(const Tensor& features, const std::filesystem::path& path) {
  auto out = open_out(path);
  const std::size_t d = features.dim(1);
  for (std::size_t j = 0; j < d; ++j) out << (j ? "," : "") << "f" << j;
  out << '\n';
  for (std::size_t i = 0; i < features.dim(0); ++i) {
    for (std::size_t j = 0; j < d; ++j) out << (j ? "," : "") << features[i * d + j];
    out << '\n';
  }
}

double probe_accuracy(const Tensor& train_features, std::span<const std::size_t> train_labels,
                      const Tensor& test_features, std::span<const std::size_t> test_labels, std::size_t a,
                      std::size_t b) {
  const std::size_t d = train_features.dim(1);
  auto gather = [&](const Tensor& f, std::span<const std::size_t> labels, std::vector<double>& x, std::vector<int>& y) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != a && labels[i] != b) continue;
      const auto row = f.values().subspan(i * d, d);
      x.insert(x.end(), row.begin(), row.end());
      y.push_back(labels[i] == a ? 1 : 0);
    }
  };
  std::vector<double> fit_x, eval_x;
  std::vector<int> fit_y, eval_y;
  gather(train_features, train_labels, fit_x, fit_y);
  gather(test_features, test_labels, eval_x, eval_y);
  if (eval_y.empty()) throw ContractError("probe has no test samples of the two classes");
  LogisticRegression probe;
  LogisticRegression::Options options;
  options.iterations = 500;
  options.l2 = 1e-3;
  probe.fit(fit_x, d, fit_y, options);
  return probe.accuracy(eval_x, eval_y);
}

// ---- similarity / convergence ------------------------------------------------

void save_similarity(const std::vector<std::vector<double>>& sim, const std::filesystem::path& path) {
  auto out = open_out(path);
  out.precision(17);
  for (const auto& row : sim) {
    for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << row[j];
    out << '\n';
  }
}

std::vector<std::vector<double>> load_similarity(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::vector<double>> sim;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError(path.string() + ": bad number '" + cell + "' on row " + std::to_string(sim.size() + 1), 0);
      }
    }
    sim.push_back(std::move(row));
  }
  for (const auto& row : sim) {
    if (row.size() != sim.size()) throw DimensionError(path.string() + ": similarity matrix is not square");
  }
  return sim;
}

std::optional<std::size_t> convergence_epoch(const std::vector<EpochEval>& curve, double forget_max,
                                             double retain_min) {
  for (const auto& e : curve) {
    if (e.acc_forget && e.acc_retain && *e.acc_forget <= forget_max && *e.acc_retain >= retain_min) return e.epoch;
  }
  return std::nullopt;
}

}  // namespace novo
