#include "mvcnet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "mvcnet/adam.hpp"
#include "mvcnet/errors.hpp"
#include "mvcnet/parallel.hpp"

namespace mvcnet {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void check_compatible(const NetworkSpec& spec, const Dataset& data) {
  if (!(spec.manifold == data.manifold) || spec.input_dims != data.dims ||
      spec.input_channels != data.channels) {
    throw ValidationError("network input (" + spec.manifold.name() + ") does not match the dataset (" +
                          data.manifold.name() + ")");
  }
}

}  // namespace

void validate(const TrainConfig& c) {
  if (c.epochs < 1) throw ValidationError("epochs: must be >= 1");
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) throw ValidationError("lr: must be > 0");
  if (!(c.lr_decay > 0.0 && c.lr_decay <= 1.0)) throw ValidationError("lr_decay: must be in (0, 1]");
  if (c.batch_size < 1) throw ValidationError("batch_size: must be >= 1");
  if (!(c.clip_norm > 0.0)) throw ValidationError("clip_norm: must be > 0");
  if (c.folds < 1) throw ValidationError("folds: must be >= 1");
  if (!(c.divergence_limit > 0.0)) throw ValidationError("divergence_limit: must be > 0");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},       {"lr", c.lr},     {"lr_decay", c.lr_decay}, {"batch_size", c.batch_size},
          {"seed", c.seed},           {"clip_norm", c.clip_norm}, {"folds", c.folds},
          {"divergence_limit", c.divergence_limit}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  try {
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
    if (j.contains("lr")) c.lr = j.at("lr").get<double>();
    if (j.contains("lr_decay")) c.lr_decay = j.at("lr_decay").get<double>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("clip_norm")) c.clip_norm = j.at("clip_norm").get<double>();
    if (j.contains("folds")) c.folds = j.at("folds").get<int>();
    if (j.contains("divergence_limit")) c.divergence_limit = j.at("divergence_limit").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  validate(c);
  return c;
}

nlohmann::json MetricsRecord::to_json(bool with_time) const {
  nlohmann::json j{{"fold", fold}, {"epoch", epoch}, {"split", split}, {"loss", loss}};
  if (accuracy) j["accuracy"] = *accuracy;
  if (r2) j["r2"] = *r2;
  j["parameter_count"] = parameter_count;
  if (with_time) j["seconds"] = seconds;
  return j;
}

double r_squared(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size() || truth.empty()) throw ContractError("r_squared: size mismatch");
  const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / truth.size();
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ss_res += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
  return 1.0 - ss_res / ss_tot;
}

EvalResult evaluate(const Network& network, const Dataset& data) {
  if (data.samples.empty()) throw ValidationError("evaluate: dataset is empty");
  check_compatible(network.spec(), data);
  const auto start = Clock::now();
  const std::size_t n = data.samples.size();
  std::vector<Vector> outputs(n);
  parallel_for(n, [&](std::size_t i) { outputs[i] = network.forward(data.samples[i].image); });
  EvalResult r;
  r.samples = n;
  r.seconds = seconds_since(start);
  r.seconds_per_sample = r.seconds / n;
  double loss = 0.0;
  if (network.is_classifier()) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(data.samples[i].target);
      if (label < 0 || label >= outputs[i].size()) {
        throw ValidationError("evaluate: label " + std::to_string(label) + " exceeds the class count");
      }
      Eigen::Index best = 0;
      outputs[i].maxCoeff(&best);
      if (best == label) ++correct;
      loss -= std::log(std::max(outputs[i](label), 1e-300));
    }
    r.accuracy = double(correct) / n;
  } else {
    std::vector<double> pred(n), clean(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = outputs[i](0);
      clean[i] = data.samples[i].clean_target;
      const double e = pred[i] - data.samples[i].target;
      loss += e * e;
    }
    r.r2 = r_squared(pred, clean);
  }
  r.loss = loss / n;
  return r;
}

TrainResult train_network(const NetworkSpec& spec, const Dataset& train, const Dataset* test,
                          const TrainConfig& config, int fold, const MetricsSink& sink) {
  validate(config);
  if (train.samples.empty()) throw ValidationError("train: training set is empty");
  check_compatible(spec, train);
  Network net = Network::build(spec, derive_seed(config.seed, 2 * fold));
  if (net.is_classifier() != train.is_classification()) {
    throw ValidationError("train: network head does not match the dataset task");
  }
  Rng shuffle_rng(derive_seed(config.seed, 2 * fold + 1));
  AdamState adam;
  AdamConfig adam_config{config.lr};
  const std::size_t n = train.samples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::optional<EvalResult> train_eval;
  std::optional<EvalResult> test_eval;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = Clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t b0 = 0; b0 < n; b0 += config.batch_size) {
      const std::size_t count = std::min<std::size_t>(config.batch_size, n - b0);
      std::vector<GradBundle> grads(count);
      std::vector<double> losses(count);
      parallel_for(count, [&](std::size_t k) {
        const LabeledSample& s = train.samples[order[b0 + k]];
        Tape tape;
        const NodeId loss = net.record_loss(tape, s.image, s.target);
        losses[k] = tape.value(loss)(0, 0);
        if (!std::isfinite(losses[k])) return;
        grads[k] = tape.backward(loss);
      });
      GradBundle total;
      for (std::size_t k = 0; k < count; ++k) {
        if (!std::isfinite(losses[k])) {
          throw NumericalAbort("NaN loss at epoch " + std::to_string(epoch) + ", fold " +
                               std::to_string(fold) + ", sample " + std::to_string(order[b0 + k]));
        }
        total.accumulate(grads[k]);
      }
      total.scale(1.0 / count);
      if (!total.all_finite()) {
        throw NumericalAbort("poisoned gradient at epoch " + std::to_string(epoch) + ", fold " +
                             std::to_string(fold));
      }
      total.clip(config.clip_norm);
      adam_step(net.params(), total, adam, adam_config);
    }
    adam_config.lr *= config.lr_decay;
    train_eval = evaluate(net, train);
    if (!std::isfinite(train_eval->loss)) {
      throw NumericalAbort("NaN loss after epoch " + std::to_string(epoch) + ", fold " +
                           std::to_string(fold));
    }
    if (train_eval->loss > config.divergence_limit) {
      throw NumericalAbort("training diverged at epoch " + std::to_string(epoch) + ": loss " +
                           std::to_string(train_eval->loss) + " exceeds " +
                           std::to_string(config.divergence_limit));
    }
    const double epoch_seconds = seconds_since(start);
    if (test != nullptr) test_eval = evaluate(net, *test);
    if (sink) {
      sink({fold, epoch, "train", train_eval->loss, train_eval->accuracy, train_eval->r2,
            epoch_seconds, net.parameter_count()});
      if (test_eval) {
        sink({fold, epoch, "test", test_eval->loss, test_eval->accuracy, test_eval->r2,
              test_eval->seconds, net.parameter_count()});
      }
    }
  }
  return {std::move(net), *train_eval, test_eval};
}

std::vector<std::vector<std::size_t>> kfold_indices(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("folds: k-fold splitting needs k >= 2");
  if (n < static_cast<std::size_t>(k)) {
    throw ValidationError("folds: " + std::to_string(k) + " folds need at least " +
                          std::to_string(k) + " samples");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> folds(k);
  for (std::size_t i = 0; i < n; ++i) folds[i % k].push_back(order[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

CvSummary cross_validate(const NetworkSpec& spec, const Dataset& data, const TrainConfig& config,
                         const MetricsSink& sink) {
  validate(config);
  const auto folds = kfold_indices(data.samples.size(), config.folds, derive_seed(config.seed, 1u << 20));
  CvSummary out;
  for (int f = 0; f < config.folds; ++f) {
    std::vector<char> in_test(data.samples.size(), 0);
    for (std::size_t i : folds[f]) in_test[i] = 1;
    std::vector<std::size_t> train_idx;
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
      if (!in_test[i]) train_idx.push_back(i);
    }
    const Dataset train = data.subset(train_idx);
    const Dataset test = data.subset(folds[f]);
    TrainResult r = train_network(spec, train, &test, config, f, sink);
    out.scores.push_back(data.is_classification() ? *r.test->accuracy : *r.test->r2);
    out.folds.push_back(std::move(r));
  }
  const double k = out.scores.size();
  out.mean = std::accumulate(out.scores.begin(), out.scores.end(), 0.0) / k;
  double var = 0.0;
  for (double s : out.scores) var += (s - out.mean) * (s - out.mean);
  out.stddev = k > 1 ? std::sqrt(var / (k - 1)) : 0.0;
  return out;
}

}  // namespace mvcnet
