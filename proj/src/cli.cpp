// SPDX-License-Identifier: Apache-2.0
#include "dglr/cli.hpp"

#include "dglr/io.hpp"
#include "dglr/metrics.hpp"
#include "dglr/text.hpp"
#include "dglr/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>

namespace dglr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string join_command(const std::vector<std::string>& args) {
  std::string out = "dglr";
  for (const auto& a : args) out += " " + a;
  return out;
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// One manifest per run, written last so it can checksum everything else.
class Manifest {
 public:
  Manifest(std::string command, fs::path out_dir)
      : command_(std::move(command)), out_dir_(std::move(out_dir)), started_(utc_now()) {}

  void input(const fs::path& path) { inputs_[path.string()] = sha256_file(path); }
  void artifact(const std::string& relative) { artifacts_.push_back(relative); }
  json config = json::object();
  std::optional<std::uint64_t> seed;

  void write(const std::string& status, const std::string& message = {}) const {
    json j;
    j["command"] = command_;
    j["config"] = config;
    j["inputs"] = inputs_;
    j["out_dir"] = out_dir_.string();
    j["seed"] = seed ? json(*seed) : json(nullptr);
    j["started"] = started_;
    j["finished"] = utc_now();
    j["status"] = status;
    if (!message.empty()) j["message"] = message;
    json sums = json::object();
    for (const auto& a : artifacts_)
      if (fs::exists(out_dir_ / a)) sums[a] = sha256_file(out_dir_ / a);
    j["artifacts"] = sums;
    write_json(j, out_dir_ / "manifest.json");
  }

 private:
  std::string command_;
  fs::path out_dir_;
  std::string started_;
  json inputs_ = json::object();
  std::vector<std::string> artifacts_;
};

struct DataFlags {
  std::string dir;
  bool planar = false;
  std::optional<Index> test_steps;

  fs::path locations() const { return fs::path(dir) / "locations.csv"; }
  fs::path observations() const { return fs::path(dir) / "observations.csv"; }

  SensorDataset load(Manifest* manifest = nullptr) const {
    for (const auto& p : {locations(), observations()})
      if (!fs::exists(p)) throw InputError("missing " + p.string());
    if (manifest) {
      manifest->input(locations());
      manifest->input(observations());
    }
    CsvOptions options;
    options.planar = planar;
    options.test_steps = test_steps;
    return load_csv(locations(), observations(), options);
  }
};

void add_data_flags(CLI::App* cmd, DataFlags& f) {
  cmd->add_option("--data", f.dir, "Directory with locations.csv and observations.csv")->required();
  cmd->add_flag("--planar", f.planar, "Treat lat/lon columns as planar x/y kilometres");
  cmd->add_option("--test-steps", f.test_steps, "Final steps held out for testing (default 20%)")
      ->check(CLI::PositiveNumber);
}

// ---------------------------------------------------------------------------
// gen-synth

struct SynthFlags {
  SyntheticSpec spec;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_gen_synth(const SynthFlags& f, const std::string& command, std::ostream& out) {
  const SensorDataset ds = generate_synthetic(f.spec, f.seed);
  const fs::path dir(f.out);
  fs::create_directories(dir);
  Manifest manifest(command, dir);
  manifest.seed = f.seed;
  manifest.config = {{"n", f.spec.num_locations}, {"t", f.spec.num_time_steps},
                     {"d", f.spec.num_features},  {"clusters", f.spec.num_clusters},
                     {"noise", f.spec.noise},     {"misspecified", f.spec.misspecified_graph},
                     {"side-km", f.spec.side_km}};
  save_csv(ds, dir / "locations.csv", dir / "observations.csv");
  manifest.artifact("locations.csv");
  manifest.artifact("observations.csv");
  manifest.write("ok");
  out << "wrote " << ds.num_locations << " locations x " << ds.num_time_steps << " steps to "
      << dir.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainFlags {
  DataFlags data;
  std::string out;
  std::string config_file;
  Index k = TrainConfig{}.embedding_dim;
  Index w = TrainConfig{}.window;
  double lr = TrainConfig{}.learning_rate;
  int epochs = TrainConfig{}.epochs;
  int outer_iters = TrainConfig{}.outer_iters;
  std::string alpha;
  std::optional<double> threshold_km;
  double cutoff_multiplier = TrainConfig{}.cutoff_multiplier;
  std::uint64_t seed = 0;
  std::string ablation = "full";
  std::string activation = "elu";
  bool validation = false;
  bool rebalance = false;
  int checkpoint_every = TrainConfig{}.checkpoint_every;
  std::string dump_graph;
  bool sweep = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  add_data_flags(cmd, f.data);
  cmd->add_option("--out", f.out, "Output directory")->required();
  cmd->add_option("--config", f.config_file, "JSON file of flag values; explicit flags win");
  cmd->add_option("--k", f.k, "Embedding dimension")->capture_default_str();
  cmd->add_option("--w", f.w, "Prediction window")->capture_default_str();
  cmd->add_option("--lr", f.lr, "ADAM learning rate")->capture_default_str();
  cmd->add_option("--epochs", f.epochs, "Epochs per outer iteration")->capture_default_str();
  cmd->add_option("--outer-iters", f.outer_iters, "Graph-update iterations")->capture_default_str();
  cmd->add_option("--alpha", f.alpha, "Manual loss weights a1,a2,a3,a4 (default: auto-balance)");
  cmd->add_option("--threshold-km", f.threshold_km, "Initial graph distance threshold");
  cmd->add_option("--cutoff-multiplier", f.cutoff_multiplier,
                  "Reconstruction cutoff as a multiple of the threshold; <= 0 disables")
      ->capture_default_str();
  cmd->add_option("--seed", f.seed)->capture_default_str();
  cmd->add_option("--ablation", f.ablation)
      ->check(CLI::IsMember({"full", "shared", "no-sl", "no-sm"}))
      ->capture_default_str();
  cmd->add_option("--activation", f.activation)
      ->check(CLI::IsMember({"elu", "tanh", "relu"}))
      ->capture_default_str();
  cmd->add_flag("--validation", f.validation, "Hold out the last 10% of training steps");
  cmd->add_flag("--rebalance", f.rebalance, "Re-balance loss weights every outer iteration");
  cmd->add_option("--checkpoint-every", f.checkpoint_every)->capture_default_str();
  cmd->add_option("--dump-graph", f.dump_graph, "Write each step's adjacency as CSV here");
  cmd->add_flag("--sweep-ablation", f.sweep, "Train all four variants and tabulate test metrics");
}

LossWeights parse_alpha(const std::string& text) {
  const auto parts = text::split(text);
  std::array<double, 4> a{};
  if (parts.size() != 4) throw InputError("--alpha expects four comma-separated weights");
  for (std::size_t k = 0; k < 4; ++k)
    if (!text::parse_double(text::trim(parts[k]), a[k]))
      throw InputError("--alpha: '" + std::string(parts[k]) + "' is not a number");
  return LossWeights::from_array(a);
}

TrainConfig to_config(const TrainFlags& f) {
  TrainConfig c;
  c.embedding_dim = f.k;
  c.window = f.w;
  c.learning_rate = f.lr;
  c.epochs = f.epochs;
  c.outer_iters = f.outer_iters;
  if (!f.alpha.empty()) c.manual_weights = parse_alpha(f.alpha);
  c.threshold_km = f.threshold_km;
  c.cutoff_multiplier = f.cutoff_multiplier;
  c.seed = f.seed;
  c.ablation = parse_ablation(f.ablation);
  c.activation = parse_activation(f.activation);
  c.validation = f.validation;
  c.rebalance_each_outer = f.rebalance;
  c.checkpoint_every = f.checkpoint_every;
  c.validate();
  return c;
}

/// Effective configuration keyed by flag name, so it can be fed back via --config.
json config_json(const TrainConfig& c, const DataFlags& data) {
  json j;
  j["k"] = c.embedding_dim;
  j["w"] = c.window;
  j["lr"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["outer-iters"] = c.outer_iters;
  if (c.manual_weights) {
    const auto a = c.manual_weights->as_array();
    j["alpha"] = json(std::vector<double>(a.begin(), a.end()));
  }
  if (c.threshold_km) j["threshold-km"] = *c.threshold_km;
  j["cutoff-multiplier"] = c.cutoff_multiplier;
  j["seed"] = c.seed;
  j["ablation"] = std::string(ablation_name(c.ablation));
  j["activation"] = std::string(activation_name(c.activation));
  j["validation"] = c.validation;
  j["rebalance"] = c.rebalance_each_outer;
  j["checkpoint-every"] = c.checkpoint_every;
  j["planar"] = data.planar;
  if (data.test_steps) j["test-steps"] = *data.test_steps;
  return j;
}

/// Config file entries rendered as argument tokens.
std::vector<std::string> config_tokens(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InputError("malformed config " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw InputError("config " + path.string() + " must be a JSON object");
  std::vector<std::string> tokens;
  for (const auto& [key, value] : j.items()) {
    if (key == "config") throw InputError("config files cannot nest --config");
    const std::string flag = "--" + key;
    if (value.is_boolean()) {
      if (value.get<bool>()) tokens.push_back(flag);
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) joined += (joined.empty() ? "" : ",") + v.dump();
      tokens.insert(tokens.end(), {flag, joined});
    } else if (value.is_string()) {
      tokens.insert(tokens.end(), {flag, value.get<std::string>()});
    } else if (value.is_number()) {
      tokens.insert(tokens.end(), {flag, value.dump()});
    } else {
      throw InputError("config key '" + key + "' has an unsupported value");
    }
  }
  return tokens;
}

struct RunOutcome {
  int code = kExitOk;
  std::optional<EvalReport> test_report;
  std::string status;
};

RunOutcome run_training(const SensorDataset& dataset, const TrainConfig& config, const TrainFlags& f,
                        const fs::path& out_dir, const std::string& command, std::ostream& out) {
  fs::create_directories(out_dir);
  Manifest manifest(command, out_dir);
  manifest.input(f.data.locations());
  manifest.input(f.data.observations());
  if (!f.config_file.empty()) manifest.input(f.config_file);
  manifest.seed = config.seed;
  manifest.config = config_json(config, f.data);

  const auto started = std::chrono::steady_clock::now();
  TrainCallbacks callbacks;
  callbacks.on_checkpoint = [&](int epoch, const TrainedModel& model) {
    save_checkpoint(model, out_dir / "checkpoint.json");
    out << "epoch " << epoch << " checkpoint written\n";
  };
  const TrainResult result = train(dataset, config, callbacks);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  save_checkpoint(result.model, out_dir / "checkpoint.json");
  write_training_log(result.log, out_dir / "train_log.csv");
  manifest.artifact("checkpoint.json");
  manifest.artifact("train_log.csv");

  if (!f.dump_graph.empty()) dump_graph(result.model.graph, f.dump_graph);

  const auto w = result.weights.as_array();
  json meta;
  meta["config"] = manifest.config;
  meta["seed"] = config.seed;
  meta["wall_time_seconds"] = wall;
  meta["epochs_run"] = result.log.size();
  meta["loss_weights"] = {{"stsm", w[0]}, {"gc", w[1]}, {"fs", w[2]}, {"ts", w[3]}};
  meta["diverged"] = result.diverged;
  if (result.diverged) meta["failure"] = result.failure;
  write_json(meta, out_dir / "meta.json");
  manifest.artifact("meta.json");

  RunOutcome outcome;
  if (result.diverged) {
    manifest.write("diverged", result.failure);
    outcome.code = kExitNumeric;
    outcome.status = "diverged";
    return outcome;
  }
  const Index horizon = dataset.num_time_steps - dataset.train_end;
  if (horizon > 0 && dataset.labeled_count(dataset.train_end, dataset.num_time_steps) > 0) {
    const Matrix all = predict_all(result.model, dataset, horizon);
    outcome.test_report =
        evaluate(all, dataset.labels, dataset.label_mask, dataset.train_end, dataset.num_time_steps);
  }
  manifest.write("ok");
  outcome.status = "ok";
  if (!result.log.empty()) {
    const auto& last = result.log.back().losses;
    out << "trained " << ablation_name(config.ablation) << ": final total "
        << text::format_double(last.total) << ", stsm " << text::format_double(last.stsm) << '\n';
  }
  return outcome;
}

std::string na_or(const std::optional<double>& v) { return v ? text::format_double(*v) : "NA"; }

int cmd_train(const TrainFlags& f, const std::string& command, std::ostream& out) {
  const TrainConfig config = to_config(f);
  const SensorDataset dataset = f.data.load();
  if (!f.sweep) return run_training(dataset, config, f, f.out, command, out).code;

  const fs::path root(f.out);
  fs::create_directories(root);
  std::ofstream table(root / "ablation_table.csv");
  if (!table) throw InputError("cannot write " + (root / "ablation_table.csv").string());
  table << "variant,rmse,smape_percent,correlation,status\n";
  int code = kExitOk;
  for (const auto variant : {Ablation::full, Ablation::shared, Ablation::no_sl, Ablation::no_sm}) {
    TrainConfig c = config;
    c.ablation = variant;
    const std::string name(ablation_name(variant));
    TrainFlags sub = f;
    if (!f.dump_graph.empty()) sub.dump_graph = (fs::path(f.dump_graph) / name).string();
    const RunOutcome r = run_training(dataset, c, sub, root / name, command, out);
    code = std::max(code, r.code);
    table << name << ',';
    if (r.test_report)
      table << text::format_double(r.test_report->mean_rmse) << ','
            << text::format_double(r.test_report->mean_smape_percent) << ','
            << na_or(r.test_report->mean_pearson);
    else
      table << "NA,NA,NA";
    table << ',' << r.status << '\n';
  }
  return code;
}

// ---------------------------------------------------------------------------
// forecast / evaluate

struct ForecastFlags {
  DataFlags data;
  std::string checkpoint;
  std::optional<Index> horizon;
  bool include_train = false;
  std::string out;
};

int cmd_forecast(const ForecastFlags& f, const std::string& command, std::ostream& out) {
  if (!fs::exists(f.checkpoint)) throw InputError("missing checkpoint " + f.checkpoint);
  const TrainedModel model = load_checkpoint(f.checkpoint);
  const fs::path dir(f.out);
  fs::create_directories(dir);
  Manifest manifest(command, dir);
  manifest.input(f.checkpoint);
  SensorDataset dataset = f.data.load(&manifest);
  if (model.train_end > dataset.num_time_steps)
    throw InputError("checkpoint trained on " + std::to_string(model.train_end) +
                     " steps, dataset has " + std::to_string(dataset.num_time_steps));
  dataset.train_end = model.train_end;

  const Index horizon = f.horizon.value_or(dataset.num_time_steps - model.train_end);
  const Matrix all = predict_all(model, dataset, horizon);
  const Index begin = f.include_train ? model.params.dims.window : model.train_end;
  write_predictions(all, begin, model.train_end + horizon, dir / "predictions.csv");
  manifest.seed = model.seed;
  manifest.config = {{"horizon", horizon}, {"include-train", f.include_train}};
  manifest.artifact("predictions.csv");
  manifest.write("ok");
  out << "wrote " << horizon << " forecast steps to " << (dir / "predictions.csv").string() << '\n';
  return kExitOk;
}

struct EvaluateFlags {
  DataFlags data;
  std::string predictions;
  std::optional<Index> begin;
  std::optional<Index> end;
  bool plot_data = false;
  std::string out;
};

int cmd_evaluate(const EvaluateFlags& f, const std::string& command, std::ostream& out) {
  const fs::path dir(f.out);
  fs::create_directories(dir);
  Manifest manifest(command, dir);
  const SensorDataset dataset = f.data.load(&manifest);
  if (!fs::exists(f.predictions)) throw InputError("missing predictions " + f.predictions);
  manifest.input(f.predictions);

  const Index begin = f.begin.value_or(dataset.train_end);
  const Index end = f.end.value_or(dataset.num_time_steps);
  const Matrix predictions =
      read_predictions(f.predictions, dataset.num_time_steps, dataset.num_locations);
  const EvalReport report = evaluate(predictions, dataset.labels, dataset.label_mask, begin, end);
  write_report_csv(report, dir / "report.csv");
  write_report_json(report, dir / "report.json");
  manifest.artifact("report.csv");
  manifest.artifact("report.json");
  if (f.plot_data) {
    Matrix window = Matrix::Constant(predictions.rows(), predictions.cols(),
                                     std::numeric_limits<double>::quiet_NaN());
    window.middleRows(begin, end - begin) = predictions.middleRows(begin, end - begin);
    write_plot_data(window, dataset.labels, dataset.label_mask, dir / "plot_data.csv");
    manifest.artifact("plot_data.csv");
  }
  manifest.config = {{"begin", begin}, {"end", end}, {"plot-data", f.plot_data}};
  manifest.write("ok");
  out << "rmse " << text::format_double(report.mean_rmse) << ", smape "
      << text::format_double(report.mean_smape_percent) << "%, correlation "
      << na_or(report.mean_pearson) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct Flags {
  SynthFlags synth;
  TrainFlags train;
  ForecastFlags forecast;
  EvaluateFlags evaluate;
};

struct Commands {
  CLI::App* synth;
  CLI::App* train;
  CLI::App* forecast;
  CLI::App* evaluate;
};

Commands build_app(CLI::App& app, Flags& f) {
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  Commands c{};
  c.synth = app.add_subcommand("gen-synth", "Generate a synthetic clustered sensor dataset");
  auto& s = f.synth;
  c.synth->add_option("--n", s.spec.num_locations, "Locations")->capture_default_str();
  c.synth->add_option("--t", s.spec.num_time_steps, "Time steps")->capture_default_str();
  c.synth->add_option("--d", s.spec.num_features, "Features per location")->capture_default_str();
  c.synth->add_option("--clusters", s.spec.num_clusters)->capture_default_str();
  c.synth->add_option("--noise", s.spec.noise, "Site noise level")->capture_default_str();
  c.synth->add_option("--side-km", s.spec.side_km, "Side of the placement square")
      ->capture_default_str();
  c.synth->add_flag("--misspecified", s.spec.misspecified_graph,
                    "Assign clusters independently of position");
  c.synth->add_option("--seed", s.seed)->capture_default_str();
  c.synth->add_option("--out", s.out, "Output directory")->required();

  c.train = app.add_subcommand("train", "Train a model and write checkpoint, log and manifest");
  add_train_flags(c.train, f.train);

  c.forecast = app.add_subcommand("forecast", "Predict the steps after the training window");
  add_data_flags(c.forecast, f.forecast.data);
  c.forecast->add_option("--checkpoint", f.forecast.checkpoint)->required();
  c.forecast->add_option("--horizon", f.forecast.horizon, "Steps to forecast (default: all)")
      ->check(CLI::NonNegativeNumber);
  c.forecast->add_flag("--include-train", f.forecast.include_train,
                       "Also write in-sample predictions from step w");
  c.forecast->add_option("--out", f.forecast.out, "Output directory")->required();

  c.evaluate = app.add_subcommand("evaluate", "Score predictions against observed labels");
  add_data_flags(c.evaluate, f.evaluate.data);
  c.evaluate->add_option("--predictions", f.evaluate.predictions)->required();
  c.evaluate->add_option("--begin", f.evaluate.begin, "First step (default: test start)");
  c.evaluate->add_option("--end", f.evaluate.end, "One past the last step (default: T)");
  c.evaluate->add_flag("--plot-data", f.evaluate.plot_data,
                       "Also write actual-vs-predicted series");
  c.evaluate->add_option("--out", f.evaluate.out, "Output directory")->required();
  return c;
}

int parse(const std::vector<std::string>& args, Flags& flags, Commands& cmds, CLI::App& app,
          std::ostream& out, std::ostream& err) {
  cmds = build_app(app, flags);
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? -1 : kExitInput;
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const std::string command = join_command(args);
  try {
    auto app = std::make_unique<CLI::App>("Semi-supervised sensor forecasting on a learned graph",
                                          "dglr");
    Flags flags;
    Commands cmds{};
    int code = parse(args, flags, cmds, *app, out, err);
    if (code != kExitOk) return code < 0 ? kExitOk : code;

    if (cmds.train->parsed() && !flags.train.config_file.empty()) {
      // Replay the file's values ahead of the explicit flags; the last
      // occurrence of an option wins.
      auto it = std::find(args.begin(), args.end(), "train");
      std::vector<std::string> merged(args.begin(), it + 1);
      const auto tokens = config_tokens(flags.train.config_file);
      merged.insert(merged.end(), tokens.begin(), tokens.end());
      merged.insert(merged.end(), it + 1, args.end());
      app = std::make_unique<CLI::App>("Semi-supervised sensor forecasting on a learned graph",
                                       "dglr");
      flags = Flags{};
      code = parse(merged, flags, cmds, *app, out, err);
      if (code != kExitOk) return code < 0 ? kExitOk : code;
    }

    if (cmds.synth->parsed()) return cmd_gen_synth(flags.synth, command, out);
    if (cmds.train->parsed()) return cmd_train(flags.train, command, out);
    if (cmds.forecast->parsed()) return cmd_forecast(flags.forecast, command, out);
    return cmd_evaluate(flags.evaluate, command, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  }
}

ManifestCheck verify_manifest(const fs::path& manifest_path) {
  ManifestCheck check;
  std::ifstream in(manifest_path);
  if (!in) {
    check.ok = false;
    check.problems.push_back("cannot open " + manifest_path.string());
    return check;
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    check.ok = false;
    check.problems.push_back(std::string("malformed manifest: ") + e.what());
    return check;
  }
  const fs::path dir = manifest_path.parent_path();
  const json artifacts = j.value("artifacts", json::object());
  for (const auto& [name, sum] : artifacts.items()) {
    const fs::path p = dir / name;
    if (!fs::exists(p)) {
      check.ok = false;
      check.problems.push_back(name + ": missing");
    } else if (sha256_file(p) != sum.get<std::string>()) {
      check.ok = false;
      check.problems.push_back(name + ": checksum mismatch");
    }
  }
  return check;
}

}  // namespace dglr
