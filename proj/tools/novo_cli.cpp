// novo: command-line front end for data generation, keyed training,
// evaluation, key withdrawal and ablations.
//
// Exit status: 0 success, 2 usage or configuration error, 3 data or file
// error, 4 numeric failure (non-finite loss), 1 anything else.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "novo/checkpoint.hpp"
#include "novo/config.hpp"
#include "novo/dataset.hpp"
#include "novo/errors.hpp"
#include "novo/eval.hpp"
#include "novo/trainer.hpp"
#include "novo/unlearn.hpp"

namespace fs = std::filesystem;
using namespace novo;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("NOVO_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != std::string(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("NOVO_SEED='") + s + "' is not an unsigned integer");
  }
}

void banner(const std::string& command, const TrainConfig& config) {
  std::cout << "# novo " << command << " effective config\n";
  std::istringstream lines(format_config(config));
  for (std::string line; std::getline(lines, line);) std::cout << "#   " << line << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
}

Checkpoint open_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw IoError("checkpoint '" + path + "' does not exist");
  return load_checkpoint(path);
}

DatasetSplit open_split(const std::string& path, const TrainConfig& config) {
  if (!fs::exists(path)) throw IoError("dataset '" + path + "' does not exist");
  return split_dataset(load_dataset(path), config.test_fraction, config.seed);
}

void print_report(const std::string& label, const EvalReport& r) {
  std::cout << label << ": " << format_report(r) << '\n';
}

void save_report(const EvalReport& r, const std::string& prefix) {
  if (prefix.empty()) return;
  write_report_csv(r, prefix + ".metrics.csv");
  write_confusion_csv(r, prefix + ".confusion.csv");
}

// ---- gen-data ------------------------------------------------------------------

struct GenArgs {
  SyntheticSpec spec;
  std::string size = "16x16";
  std::optional<std::uint64_t> seed;
  std::string out;
};

int run_gen(const GenArgs& a) {
  SyntheticSpec spec = a.spec;
  const auto x = a.size.find_first_of("xX");
  if (x == std::string::npos) throw ConfigError("--size expects HxW, got '" + a.size + "'");
  try {
    spec.height = std::stoul(a.size.substr(0, x));
    spec.width = std::stoul(a.size.substr(x + 1));
  } catch (const std::exception&) {
    throw ConfigError("--size expects HxW, got '" + a.size + "'");
  }
  spec.seed = a.seed ? *a.seed : env_seed().value_or(0);
  const auto suite = synth_generate(spec);
  save_dataset(suite.data, a.out);
  save_similarity(suite.similarity, a.out + ".similarity.csv");
  std::cout << "wrote " << suite.data.size() << " samples (" << spec.class_count << " classes, " << spec.height
            << "x" << spec.width << "x" << spec.channels << ", seed " << spec.seed << ") to " << a.out << '\n';
  return 0;
}

// ---- train ---------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, resume, metrics, loss_weights;
  bool no_expand = false, no_drop_expand = false, plain = false;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
};

TrainConfig effective_config(const std::string& config_path, const std::optional<std::uint64_t>& seed_flag) {
  TrainConfig base;
  if (auto s = env_seed()) base.seed = *s;
  TrainConfig config = config_path.empty() ? base : load_config(config_path, base);
  if (seed_flag) config.seed = *seed_flag;
  return config;
}

LossWeights parse_weights(const std::string& text) {
  std::stringstream ss(text);
  std::vector<double> v;
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      v.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("--loss-weights expects beta,gamma,tau; got '" + text + "'");
    }
  }
  if (v.size() != 3) throw ConfigError("--loss-weights expects three values beta,gamma,tau; got '" + text + "'");
  LossWeights w{v[0], v[1], v[2]};
  w.validate();
  return w;
}

int run_train(const TrainArgs& a) {
  TrainConfig config;
  std::optional<Checkpoint> from;
  if (!a.resume.empty()) {
    from = open_checkpoint(a.resume);
    config = from->config;
  } else {
    config = effective_config(a.config, a.seed);
  }
  if (a.no_drop_expand) config.drop_expand = DropExpandMode::kNone;
  else if (a.no_expand) config.drop_expand = DropExpandMode::kDropOnly;
  if (!a.loss_weights.empty()) config.weights = parse_weights(a.loss_weights);
  if (a.plain) config.model.prompts = false;
  if (a.epochs) config.epochs = *a.epochs;
  if (a.lr) config.learning_rate = *a.lr;
  config.validate();
  if (from) from->config = config;
  banner("train", config);

  const auto split = open_split(a.data, config);
  TrainOptions opts;
  opts.nan_snapshot = a.out + ".nan";
  opts.on_epoch = [](const EpochMetrics& m, const NovoModel&) {
    std::cout << "epoch " << m.epoch << " l_ce=" << m.l_ce << " l_u=" << m.l_u << " l_i=" << m.l_i
              << " total=" << m.total << " acc_retain_train=" << m.acc_retain_train << std::endl;
  };
  const auto result = from ? resume(*from, split.train, opts) : train(config, split.train, opts);
  save_checkpoint(result.checkpoint, a.out);
  const std::string metrics = a.metrics.empty() ? a.out + ".metrics.csv" : a.metrics;
  write_metrics_csv(result.log, metrics);
  write_text(metrics + ".config", format_config(config));
  const auto report = evaluate(result.checkpoint.model, KeyState::all_active(config.model.num_classes), split.test);
  print_report("test (all keys)", report);
  std::cout << "wrote " << a.out << " and " << metrics << '\n';
  return 0;
}

// ---- evaluate / unlearn / seal -------------------------------------------------------

struct EvalArgs {
  std::string ckpt, data, forget, report, similarity, mia_features = "loss", seal;
  bool mia = false;
};

MiaFeatures parse_mia_features(const std::string& s) {
  if (s == "loss") return MiaFeatures::kLoss;
  if (s == "rich") return MiaFeatures::kLossEntropyMargin;
  throw ConfigError("--mia-features expects loss|rich, got '" + s + "'");
}

void print_vicinity(const EvalReport& r, const std::string& similarity_path) {
  std::optional<std::vector<std::vector<double>>> sim;
  if (!similarity_path.empty()) sim = load_similarity(similarity_path);
  for (const auto& v : vicinity_confusion(r, sim)) {
    std::cout << "  class " << v.withdrawn_class << " -> " << v.modal_class << " (" << 100.0 * v.share << "%)";
    if (v.nearest_active) {
      std::cout << " nearest active " << *v.nearest_active << (*v.modal_is_nearest ? " [match]" : " [no match]");
    }
    if (v.no_near_neighbor) std::cout << " [no near neighbor]";
    std::cout << '\n';
  }
}

EvalReport evaluate_with_mia(const Checkpoint& ckpt, const KeyState& state, const DatasetSplit& split,
                             const EvalArgs& a) {
  auto r = evaluate(ckpt.model, state, split.test);
  if (a.mia && !state.withdrawn().empty()) {
    MiaOptions o;
    o.features = parse_mia_features(a.mia_features);
    o.seed = ckpt.config.seed;
    r.mia = mia_score(ckpt.model, state, split.train, split.test, state.withdrawn(), o).score;
  }
  return r;
}

int run_evaluate(const EvalArgs& a) {
  const auto ckpt = open_checkpoint(a.ckpt);
  banner("evaluate", ckpt.config);
  const auto split = open_split(a.data, ckpt.config);
  const auto forget = parse_class_list(a.forget);
  EvalReport r;
  if (ckpt.config.model.prompts) {
    r = evaluate_with_mia(ckpt, withdraw(KeyState::for_checkpoint(ckpt), forget), split, a);
  } else {
    r = masking_baseline(ckpt.model, forget, split.test);
    if (a.mia && !forget.empty()) {
      MiaOptions o;
      o.features = parse_mia_features(a.mia_features);
      o.seed = ckpt.config.seed;
      r.mia = mia_score(ckpt.model, KeyState::all_active(ckpt.config.model.num_classes), split.train, split.test,
                        forget, o)
                  .score;
    }
  }
  print_report(ckpt.config.model.prompts ? "test" : "test (masking baseline)", r);
  print_vicinity(r, a.similarity);
  save_report(r, a.report);
  return 0;
}

int run_unlearn(const EvalArgs& a) {
  const auto ckpt = open_checkpoint(a.ckpt);
  if (!ckpt.config.model.prompts) throw ContractError("unlearn needs a keyed checkpoint; use evaluate for plain ones");
  banner("unlearn", ckpt.config);
  const auto split = open_split(a.data, ckpt.config);
  const auto forget = parse_class_list(a.forget);
  const auto checksum = parameter_checksum(ckpt.model);

  const auto before_state = KeyState::for_checkpoint(ckpt);
  const auto before = evaluate_with_mia(ckpt, before_state, split, a);
  const auto t0 = std::chrono::steady_clock::now();
  const auto after_state = withdraw(before_state, forget);
  const auto A = after_state.A();
  const auto U = after_state.U();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto after = evaluate_with_mia(ckpt, after_state, split, a);

  print_report("before", before);
  print_report("after", after);
  print_vicinity(after, a.similarity);
  std::cout << "withdrawal step: " << seconds * 1e6 << " us (A=" << A.str() << " U=" << U.str() << ")\n";
  if (parameter_checksum(ckpt.model) != checksum) throw ContractError("parameter checksum changed during unlearning");
  std::cout << "parameter checksum unchanged: " << std::hex << checksum << std::dec << '\n';
  if (!a.report.empty()) {
    save_report(before, a.report + ".before");
    save_report(after, a.report + ".after");
  }
  if (!a.seal.empty()) {
    save_checkpoint(seal(ckpt, after_state), a.seal);
    std::cout << "wrote sealed checkpoint " << a.seal << '\n';
  }
  return 0;
}

int run_seal(const std::string& ckpt_path, const std::string& forget, const std::string& out) {
  const auto ckpt = open_checkpoint(ckpt_path);
  banner("seal", ckpt.config);
  const auto state = withdraw(KeyState::for_checkpoint(ckpt), parse_class_list(forget));
  save_checkpoint(seal(ckpt, state), out);
  std::cout << "wrote sealed checkpoint " << out << '\n';
  return 0;
}

// ---- export-features -------------------------------------------------------------

int run_export(const std::string& ckpt_path, const std::string& data, const std::string& token,
               const std::string& forget, const std::string& which, const std::string& out) {
  const auto ckpt = open_checkpoint(ckpt_path);
  banner("export-features", ckpt.config);
  const auto tok = parse_feature_token(token);
  if (which != "train" && which != "test") throw ConfigError("--split expects train|test, got '" + which + "'");
  const auto split = open_split(data, ckpt.config);
  const LabeledDataset& set = which == "train" ? split.train : split.test;
  const auto state = withdraw(KeyState::for_checkpoint(ckpt), parse_class_list(forget));
  const auto f = dataset_features(ckpt.model, set, state, tok);
  write_features_csv(f, out);
  std::ofstream labels(out + ".labels");
  for (auto y : set.labels) labels << y << '\n';
  std::cout << "wrote " << f.dim(0) << "x" << f.dim(1) << " " << token << " features to " << out << '\n';
  return 0;
}

// ---- ablate --------------------------------------------------------------------

struct AblateArgs {
  std::string config, data, out_dir = "ablate", gammas = "0,1", taus = "0,1",
                               modes = "none,drop_only,drop_and_expand", forget = "2,5";
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
};

std::vector<double> parse_doubles(const std::string& text, const char* flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError(std::string(flag) + ": bad number '" + item + "'");
    }
  }
  return out;
}

int run_ablate(const AblateArgs& a) {
  TrainConfig base = effective_config(a.config, a.seed);
  if (a.epochs) base.epochs = *a.epochs;
  base.validate();
  banner("ablate", base);
  const auto split = open_split(a.data, base);
  const auto forget = parse_class_list(a.forget);
  const auto withdrawn = withdraw(KeyState::all_active(base.model.num_classes), forget);
  fs::create_directories(a.out_dir);

  std::vector<DropExpandMode> modes;
  std::stringstream ms(a.modes);
  for (std::string m; std::getline(ms, m, ',');) modes.push_back(parse_drop_expand(m));

  std::ofstream summary(fs::path(a.out_dir) / "summary.csv");
  if (!summary) throw IoError("cannot write to '" + a.out_dir + "'");
  summary << "cell,gamma,tau,drop_expand,acc_retain,acc_forget,epochs_to_forget\n";
  for (double gamma : parse_doubles(a.gammas, "--gammas")) {
    for (double tau : parse_doubles(a.taus, "--taus")) {
      for (auto mode : modes) {
        TrainConfig config = base;
        config.weights.gamma = gamma;
        config.weights.tau = tau;
        config.drop_expand = mode;
        config.validate();
        std::ostringstream name;
        name << "g" << gamma << "_t" << tau << "_" << to_string(mode);
        std::vector<EpochEval> curve;
        TrainOptions opts;
        opts.on_epoch = [&](const EpochMetrics& m, const NovoModel& model) {
          const auto r = evaluate(model, withdrawn, split.test);
          curve.push_back({m.epoch, r.acc_retain, r.acc_forget});
        };
        const auto result = train(config, split.train, opts);

        const fs::path cell = fs::path(a.out_dir) / (name.str() + ".csv");
        std::ofstream out(cell);
        out << "epoch,l_ce,l_u,l_i,total,acc_retain_train,acc_retain_test,acc_forget_test\n";
        for (std::size_t i = 0; i < result.log.size(); ++i) {
          const auto& m = result.log[i];
          out << m.epoch << ',' << m.l_ce << ',' << m.l_u << ',' << m.l_i << ',' << m.total << ','
              << m.acc_retain_train << ',' << curve[i].acc_retain.value_or(0) << ','
              << curve[i].acc_forget.value_or(0) << '\n';
        }
        write_text(cell.string() + ".config", format_config(config));
        const auto conv = convergence_epoch(curve);
        summary << name.str() << ',' << gamma << ',' << tau << ',' << to_string(mode) << ','
                << curve.back().acc_retain.value_or(0) << ',' << curve.back().acc_forget.value_or(0) << ','
                << (conv ? std::to_string(*conv) : std::string("never")) << '\n';
        std::cout << name.str() << ": acc_retain=" << curve.back().acc_retain.value_or(0)
                  << " acc_forget=" << curve.back().acc_forget.value_or(0)
                  << " epochs_to_forget=" << (conv ? std::to_string(*conv) : std::string("never")) << std::endl;
      }
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Keyed ViT training and on-the-fly class unlearning"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate the synthetic pattern dataset");
  g->add_option("--classes", gen.spec.class_count, "Number of classes")->capture_default_str();
  g->add_option("--per-class", gen.spec.per_class, "Samples per class")->capture_default_str();
  g->add_option("--size", gen.size, "Image size HxW")->capture_default_str();
  g->add_option("--channels", gen.spec.channels, "Image channels")->capture_default_str();
  g->add_option("--noise", gen.spec.noise, "Gaussian noise sigma")->capture_default_str();
  g->add_option("--seed", gen.seed, "Generator seed (default: NOVO_SEED or 0)");
  g->add_option("--out", gen.out, "Output dataset file")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a keyed (or plain) model");
  t->add_option("--config", tr.config, "Config file (key = value)");
  t->add_option("--data", tr.data, "Dataset file")->required();
  t->add_option("--out", tr.out, "Output checkpoint")->required();
  t->add_option("--resume", tr.resume, "Continue a checkpoint up to its configured epochs");
  t->add_option("--metrics", tr.metrics, "Metrics CSV (default: OUT.metrics.csv)");
  t->add_option("--loss-weights", tr.loss_weights, "beta,gamma,tau");
  t->add_option("--epochs", tr.epochs, "Override epochs");
  t->add_option("--seed", tr.seed, "Override seed");
  t->add_option("--lr", tr.lr, "Override learning rate");
  t->add_flag("--no-expand", tr.no_expand, "Drop only, no expansion");
  t->add_flag("--no-drop-expand", tr.no_drop_expand, "Neither drop nor expansion");
  t->add_flag("--plain", tr.plain, "Train the prompt-free backbone with plain cross-entropy");

  EvalArgs ev;
  auto* e = app.add_subcommand("evaluate", "Evaluate a checkpoint under a key state");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  e->add_option("--data", ev.data, "Dataset file")->required();
  e->add_option("--forget", ev.forget, "Classes to withdraw, e.g. \"3,7\"");
  e->add_option("--report", ev.report, "Write PREFIX.metrics.csv and PREFIX.confusion.csv");
  e->add_option("--similarity", ev.similarity, "Class similarity CSV for the vicinity summary");
  e->add_flag("--mia", ev.mia, "Run the membership-inference attack on the withdrawn classes");
  e->add_option("--mia-features", ev.mia_features, "loss | rich")->capture_default_str();

  EvalArgs un;
  auto* u = app.add_subcommand("unlearn", "Withdraw keys and report before/after metrics");
  u->add_option("--ckpt", un.ckpt, "Checkpoint")->required();
  u->add_option("--data", un.data, "Dataset file")->required();
  u->add_option("--forget", un.forget, "Classes to withdraw, e.g. \"3,7\"")->required();
  u->add_option("--seal", un.seal, "Write a sealed checkpoint");
  u->add_option("--report", un.report, "Write PREFIX.before.* and PREFIX.after.* CSVs");
  u->add_option("--similarity", un.similarity, "Class similarity CSV for the vicinity summary");
  u->add_flag("--mia", un.mia, "Run the membership-inference attack on the withdrawn classes");
  u->add_option("--mia-features", un.mia_features, "loss | rich")->capture_default_str();

  std::string seal_ckpt, seal_forget, seal_out;
  auto* s = app.add_subcommand("seal", "Bake a withdrawal into a new checkpoint");
  s->add_option("--ckpt", seal_ckpt, "Checkpoint")->required();
  s->add_option("--forget", seal_forget, "Classes to withdraw")->required();
  s->add_option("--out", seal_out, "Sealed checkpoint")->required();

  std::string fx_ckpt, fx_data, fx_token = "UT", fx_forget, fx_split = "test", fx_out;
  auto* x = app.add_subcommand("export-features", "Write final-layer token features as CSV");
  x->add_option("--ckpt", fx_ckpt, "Checkpoint")->required();
  x->add_option("--data", fx_data, "Dataset file")->required();
  x->add_option("--token", fx_token, "CLS | LT | UT")->capture_default_str();
  x->add_option("--forget", fx_forget, "Classes to withdraw first");
  x->add_option("--split", fx_split, "train | test")->capture_default_str();
  x->add_option("--out", fx_out, "Output CSV")->required();

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "Train the gamma/tau/drop-expand grid");
  a->add_option("--config", ab.config, "Base config file");
  a->add_option("--data", ab.data, "Dataset file")->required();
  a->add_option("--out-dir", ab.out_dir, "Directory for per-cell CSVs")->capture_default_str();
  a->add_option("--gammas", ab.gammas, "gamma values")->capture_default_str();
  a->add_option("--taus", ab.taus, "tau values")->capture_default_str();
  a->add_option("--modes", ab.modes, "drop_expand values")->capture_default_str();
  a->add_option("--forget", ab.forget, "Classes withdrawn when measuring forgetting")->capture_default_str();
  a->add_option("--epochs", ab.epochs, "Override epochs");
  a->add_option("--seed", ab.seed, "Override seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*g) return run_gen(gen);
    if (*t) return run_train(tr);
    if (*e) return run_evaluate(ev);
    if (*u) return run_unlearn(un);
    if (*s) return run_seal(seal_ckpt, seal_forget, seal_out);
    if (*x) return run_export(fx_ckpt, fx_data, fx_token, fx_forget, fx_split, fx_out);
    if (*a) return run_ablate(ab);
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitUsage;
  } catch (const IndexError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& err) {
    std::cerr << "numeric failure: " << err.what() << '\n';
    return kExitNumeric;
  } catch (const FormatError& err) {
    std::cerr << "data error: " << err.what() << '\n';
    return kExitData;
  } catch (const IoError& err) {
    std::cerr << "data error: " << err.what() << '\n';
    return kExitData;
  } catch (const DimensionError& err) {
    std::cerr << "data error: " << err.what() << '\n';
    return kExitData;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
