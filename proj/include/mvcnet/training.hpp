#pragma once

// Mini-batch Adam training, evaluation and k-fold cross-validation.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvcnet/network.hpp"
#include "mvcnet/synth.hpp"

namespace mvcnet {

struct TrainConfig {
  int epochs = 30;
  double lr = 0.005;
  /// Learning rate is multiplied by this after every epoch.
  double lr_decay = 1.0;
  int batch_size = 20;
  std::uint64_t seed = 1;
  double clip_norm = 10.0;
  int folds = 10;
  /// Mean epoch loss above this aborts the run.
  double divergence_limit = 1e6;
};

void validate(const TrainConfig& config);
nlohmann::json to_json(const TrainConfig& config);
/// Fields absent from `j` keep the values of `base`.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct MetricsRecord {
  int fold = 0;
  int epoch = 0;
  std::string split;  // "train" or "test"
  double loss = 0.0;
  std::optional<double> accuracy;
  std::optional<double> r2;
  double seconds = 0.0;
  std::size_t parameter_count = 0;

  /// Wall-clock time is left out unless requested so that metric streams of
  /// identical runs compare equal byte for byte.
  nlohmann::json to_json(bool with_time = false) const;
};

struct EvalResult {
  double loss = 0.0;
  std::optional<double> accuracy;
  /// Coefficient of determination of predictions against the clean targets.
  std::optional<double> r2;
  std::size_t samples = 0;
  double seconds = 0.0;
  double seconds_per_sample = 0.0;
};

/// Throws ValidationError on an empty dataset.
EvalResult evaluate(const Network& network, const Dataset& data);

double r_squared(const std::vector<double>& predictions, const std::vector<double>& truth);

using MetricsSink = std::function<void(const MetricsRecord&)>;

struct TrainResult {
  Network network;
  EvalResult train;
  std::optional<EvalResult> test;
};

/// Trains a freshly built network. One train record (and one test record
/// when `test` is given) is emitted per epoch, each a full evaluation after
/// that epoch's updates. Throws NumericalAbort on a NaN loss or divergence.
TrainResult train_network(const NetworkSpec& spec, const Dataset& train, const Dataset* test,
                          const TrainConfig& config, int fold = 0, const MetricsSink& sink = {});

/// Seeded shuffle split into k folds of near-equal size; returns test indices per fold.
std::vector<std::vector<std::size_t>> kfold_indices(std::size_t n, int k, std::uint64_t seed);

struct CvSummary {
  std::vector<TrainResult> folds;
  /// Per-fold test accuracy (classification) or R^2 (regression).
  std::vector<double> scores;
  double mean = 0.0;
  double stddev = 0.0;
};

CvSummary cross_validate(const NetworkSpec& spec, const Dataset& data, const TrainConfig& config,
                         const MetricsSink& sink = {});

}  // namespace mvcnet
