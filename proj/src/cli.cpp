#include "mvcnet/cli.hpp"

#include <Eigen/Core>
#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "mvcnet/binary_io.hpp"
#include "mvcnet/checkpoint.hpp"
#include "mvcnet/dataset_io.hpp"
#include "mvcnet/errors.hpp"
#include "mvcnet/parallel.hpp"
#include "mvcnet/presets.hpp"
#include "mvcnet/training.hpp"
#include "mvcnet/verify.hpp"

namespace mvcnet {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Options {
  std::string config;
  std::string preset;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string manifold = "spd3";
  std::optional<std::uint64_t> seed;
  std::optional<int> folds;
  std::optional<double> lr;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> sigma;
  std::optional<int> n_samples;
  int trials = 100;
  bool single_thread = false;
  bool inject_fault = false;
};

class PropertyFailure : public Error {
 public:
  using Error::Error;
};

json versions() {
  return {{"mvcnet", std::string(kToolVersion)},
          {"checkpoint_format", std::string(kCheckpointVersion)},
          {"dataset_format", "mvt-v1"},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                        "." + std::to_string(EIGEN_MINOR_VERSION)},
          {"compiler", __VERSION__}};
}

json read_json_file(const std::string& path) {
  if (!fs::exists(path)) throw ValidationError("config: file not found: " + path);
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("config: " + path + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) { write_file(path, text); }

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ValidationError(what + ": a path is required");
  if (!fs::exists(path)) throw ValidationError(what + ": file not found: " + path);
}

// A config is either a bare dataset spec or an object with a "dataset" section.
DatasetSpec dataset_spec_for(const Options& o, const json& config) {
  DatasetSpec spec;
  if (config.contains("dataset")) {
    spec = dataset_spec_from_json(config.at("dataset"));
  } else if (config.contains("task") || config.contains("preset")) {
    spec = dataset_spec_from_json(config);
  } else if (!o.preset.empty()) {
    spec = dataset_preset(o.preset);
  } else {
    throw ValidationError("gen: need --preset or --config with a dataset spec");
  }
  if (o.seed) spec.seed = *o.seed;
  if (o.sigma) spec.sigma = *o.sigma;
  if (o.n_samples) spec.n_samples = *o.n_samples;
  validate(spec);
  return spec;
}

int cmd_gen(const Options& o, std::ostream& out) {
  if (o.out.empty()) throw ValidationError("gen: --out is required");
  const json config = o.config.empty() ? json::object() : read_json_file(o.config);
  const DatasetSpec spec = dataset_spec_for(o, config);
  const Dataset data = generate_dataset(spec);
  const std::string bytes = encode_dataset(data);
  write_file(o.out, bytes);
  const std::string checksum = checksum_hex(bytes);
  json manifest = {{"command", "gen"},
                   {"dataset", to_json(spec)},
                   {"samples", data.samples.size()},
                   {"dataset_checksum", checksum},
                   {"versions", versions()}};
  write_text(o.out + ".manifest.json", manifest.dump(2) + "\n");
  out << "samples " << data.samples.size() << " checksum " << checksum << "\n";
  return kExitOk;
}

void check_network_matches(const NetworkSpec& net, const Dataset& data) {
  if (!(net.manifold == data.manifold)) {
    throw ValidationError("network manifold " + net.manifold.name() +
                          " does not match dataset manifold " + data.manifold.name());
  }
  if (net.input_dims != data.dims || net.input_channels != data.channels) {
    throw ValidationError("network input shape does not match the dataset grid");
  }
}

int cmd_train(const Options& o, std::ostream& out) {
  if (o.out.empty()) throw ValidationError("train: --out is required");
  const json config = o.config.empty() ? json::object() : read_json_file(o.config);

  std::optional<ExperimentPreset> preset;
  std::string preset_name = o.preset;
  if (preset_name.empty() && config.contains("preset")) {
    preset_name = config.at("preset").get<std::string>();
  }
  if (!preset_name.empty()) preset = experiment_preset(preset_name);

  // Dataset: explicit file, else generated from the config or preset spec.
  std::string data_path = o.data;
  if (data_path.empty() && config.contains("data_path")) {
    data_path = config.at("data_path").get<std::string>();
  }
  Dataset data;
  std::optional<DatasetSpec> data_spec;
  if (!data_path.empty()) {
    require_file(data_path, "data");
    data = load_dataset(data_path);
  } else {
    if (config.contains("dataset")) {
      data_spec = dataset_spec_from_json(config.at("dataset"));
    } else if (preset) {
      data_spec = preset->dataset;
    } else {
      throw ValidationError("train: need --data, --preset or a config with a dataset section");
    }
    validate(*data_spec);
    data = generate_dataset(*data_spec);
  }
  const std::string checksum = checksum_hex(encode_dataset(data));
  if (config.contains("dataset_checksum") &&
      config.at("dataset_checksum").get<std::string>() != checksum) {
    throw ValidationError("dataset checksum " + checksum + " does not match the manifest (" +
                          config.at("dataset_checksum").get<std::string>() + ")");
  }

  NetworkSpec net_spec;
  if (config.contains("network")) {
    net_spec = network_spec_from_json(config.at("network"));
  } else if (preset && preset->dataset.task == data.task) {
    net_spec = preset->network;
  } else {
    net_spec = default_network(data);
  }
  validate(net_spec);
  check_network_matches(net_spec, data);

  TrainConfig tc = preset ? preset->train : TrainConfig{};
  if (config.contains("train")) tc = train_config_from_json(config.at("train"), tc);
  if (o.seed) tc.seed = *o.seed;
  if (o.folds) tc.folds = *o.folds;
  if (o.lr) tc.lr = *o.lr;
  if (o.epochs) tc.epochs = *o.epochs;
  if (o.batch_size) tc.batch_size = *o.batch_size;
  if (tc.folds < 1) throw ValidationError("folds: must be >= 1");
  validate(tc);

  const fs::path dir(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw ValidationError("out: cannot create directory " + o.out);
  }

  json manifest = {{"command", "train"},
                   {"network", to_json(net_spec)},
                   {"train", to_json(tc)},
                   {"dataset_checksum", checksum},
                   {"single_thread", o.single_thread},
                   {"versions", versions()}};
  if (!preset_name.empty()) manifest["preset"] = preset_name;
  if (data_spec) {
    manifest["dataset"] = to_json(*data_spec);
  } else {
    manifest["data_path"] = fs::absolute(data_path).string();
  }
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary);
  std::ofstream timing(dir / "timing.jsonl", std::ios::binary);
  if (!metrics || !timing) throw ValidationError("out: cannot write metrics in " + o.out);
  const MetricsSink sink = [&](const MetricsRecord& r) {
    metrics << r.to_json().dump() << "\n";
    timing << r.to_json(true).dump() << "\n";
    metrics.flush();
    timing.flush();
  };

  const std::string metric = data.is_classification() ? "accuracy" : "r2";
  json summary = {{"metric", metric}, {"folds", tc.folds}, {"samples", data.samples.size()}};
  if (tc.folds >= 2) {
    const CvSummary cv = cross_validate(net_spec, data, tc, sink);
    for (std::size_t f = 0; f < cv.folds.size(); ++f) {
      save_checkpoint(cv.folds[f].network, dir / ("fold_" + std::to_string(f) + ".ckpt"));
    }
    summary["scores"] = cv.scores;
    summary["mean"] = cv.mean;
    summary["stddev"] = cv.stddev;
    out << tc.folds << "-fold test " << metric << ": mean " << cv.mean << " std " << cv.stddev
        << "\n";
  } else {
    const TrainResult r = train_network(net_spec, data, nullptr, tc, 0, sink);
    save_checkpoint(r.network, dir / "model.ckpt");
    const double score = data.is_classification() ? *r.train.accuracy : *r.train.r2;
    summary["train_loss"] = r.train.loss;
    summary["train_" + metric] = score;
    out << "train " << metric << ": " << score << " loss " << r.train.loss << "\n";
  }
  summary["parameter_count"] = Network::build(net_spec, tc.seed).parameter_count();
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  out << "wrote " << dir.string() << "\n";
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  require_file(o.checkpoint, "checkpoint");
  const Network net = load_checkpoint(o.checkpoint);
  Dataset data;
  if (!o.data.empty()) {
    require_file(o.data, "data");
    data = load_dataset(o.data);
  } else if (!o.preset.empty()) {
    data = generate_dataset(dataset_preset(o.preset));
  } else {
    throw ValidationError("eval: need --data or --preset");
  }
  if (data.samples.empty()) throw ValidationError("eval: dataset is empty");
  check_network_matches(net.spec(), data);
  const EvalResult r = evaluate(net, data);
  json j = {{"samples", r.samples},
            {"loss", r.loss},
            {"seconds", r.seconds},
            {"seconds_per_sample", r.seconds_per_sample},
            {"parameter_count", net.parameter_count()}};
  if (r.accuracy) j["accuracy"] = *r.accuracy;
  if (r.r2) j["r2"] = *r.r2;
  out << j.dump() << "\n";
  return kExitOk;
}

std::vector<ManifoldId> manifolds_for(const std::string& text) {
  if (text == "all") return {ManifoldId::spd(3), ManifoldId::sphere(2)};
  return {ManifoldId::parse(text)};
}

int cmd_verify(const Options& o, bool gradients_only, std::ostream& out, std::ostream& err) {
  if (o.trials < 0) throw ValidationError("trials: must be >= 0");
  const auto manifolds = manifolds_for(o.manifold);
  if (o.trials == 0) {
    err << "warning: trials = 0, no properties were exercised (vacuous pass)\n";
    out << "0 properties checked\n";
    return kExitOk;
  }
  VerifyReport report;
  for (const ManifoldId& m : manifolds) {
    VerifyOptions vo;
    vo.manifold = m;
    vo.seed = o.seed.value_or(1);
    vo.trials = o.trials;
    vo.inject_fault = o.inject_fault;
    report.append(gradients_only ? verify_gradients(vo) : verify_all(vo));
  }
  out << report.summary();
  if (!o.out.empty()) write_text(o.out, report.to_json().dump(2) + "\n");
  if (!report.passed()) throw PropertyFailure("property check failed");
  return kExitOk;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--seed", o.seed, "RNG seed");
  cmd->add_flag("--single-thread", o.single_thread, "run on one worker thread");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Manifold-valued convolution networks"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset file");
  gen->add_option("--preset", o.preset, "dataset preset name");
  gen->add_option("--config", o.config, "JSON dataset spec");
  gen->add_option("--out", o.out, "output dataset path");
  gen->add_option("--sigma", o.sigma, "noise level override");
  gen->add_option("--n-samples", o.n_samples, "sample count override");
  add_common(gen, o);

  auto* train = app.add_subcommand("train", "train a network, k-fold by default");
  train->add_option("--preset", o.preset, "experiment preset name");
  train->add_option("--config", o.config, "JSON run config or a previous manifest");
  train->add_option("--data", o.data, "dataset file");
  train->add_option("--out", o.out, "run directory");
  train->add_option("--folds", o.folds, "cross-validation folds; 1 trains on all data");
  train->add_option("--lr", o.lr, "Adam learning rate");
  train->add_option("--epochs", o.epochs, "epochs per fold");
  train->add_option("--batch-size", o.batch_size, "mini-batch size");
  add_common(train, o);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file");
  eval->add_option("--data", o.data, "dataset file");
  eval->add_option("--preset", o.preset, "generate the dataset from a preset");
  add_common(eval, o);

  auto* verify = app.add_subcommand("verify", "run the property suites");
  auto* grad = app.add_subcommand("grad-check", "run the gradient checks only");
  for (auto* cmd : {verify, grad}) {
    cmd->add_option("--manifold", o.manifold, "spd<n>, sphere<n> or all");
    cmd->add_option("--trials", o.trials, "trials per randomized property");
    cmd->add_flag("--inject-fault", o.inject_fault, "skew the isometry on one side");
    cmd->add_option("--out", o.out, "JSON report path");
    add_common(cmd, o);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (o.single_thread) set_thread_limit(1);
    if (*gen) return cmd_gen(o, out);
    if (*train) return cmd_train(o, out);
    if (*eval) return cmd_eval(o, out);
    if (*verify) return cmd_verify(o, false, out, err);
    if (*grad) return cmd_verify(o, true, out, err);
  } catch (const PropertyFailure& e) {
    err << "error: " << e.what() << "\n";
    return kExitPropertyFailure;
  } catch (const NumericalAbort& e) {
    err << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ConvergenceError& e) {
    err << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const NonUniqueMeanError& e) {
    err << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ChartError& e) {
    err << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}

int run_cli(int argc, const char* const* argv) { return run_cli(argc, argv, std::cout, std::cerr); }

}  // namespace mvcnet
