#include "mvcnet/presets.hpp"

#include <json.hpp>

#include "mvcnet/errors.hpp"

namespace mvcnet {

namespace {

using nlohmann::json;

json mvc(std::vector<int> window, int out_channels) {
  return {{"type", "mvc"}, {"window", window}, {"out_channels", out_channels}};
}
json trelu() { return {{"type", "trelu"}}; }
json mvfc() { return {{"type", "mvfc"}}; }
json fc(int out, bool relu) { return {{"type", "fc"}, {"out", out}, {"relu", relu}}; }
json softmax() { return {{"type", "softmax"}}; }

NetworkSpec make(const ManifoldId& m, std::vector<int> dims, int channels, json layers) {
  return network_spec_from_json(json{{"manifold", m.name()},
                                     {"input_dims", dims},
                                     {"input_channels", channels},
                                     {"layers", std::move(layers)}});
}

// Five MVC+tReLU blocks, MVFC, two FC layers.
NetworkSpec image_class_network(const ManifoldId& m, const std::vector<int>& dims,
                                int channels, int classes) {
  // Valid 3-wide windows for the first three blocks while the grid allows it.
  std::vector<int> extent = dims;
  json layers = json::array();
  for (int i = 0; i < 5; ++i) {
    std::vector<int> window(dims.size(), 1);
    for (std::size_t a = 0; a < dims.size(); ++a) {
      if (i < 3 && extent[a] >= 3) window[a] = 3;
      extent[a] -= window[a] - 1;
    }
    layers.push_back(mvc(window, 2));
    layers.push_back(trelu());
  }
  layers.push_back(mvfc());
  layers.push_back(fc(8, true));
  layers.push_back(fc(classes, false));
  layers.push_back(softmax());
  return make(m, dims, channels, std::move(layers));
}

NetworkSpec regression_network(const ManifoldId& m, const std::vector<int>& dims, int channels) {
  const std::vector<int> w5(dims.size(), 5);
  json layers = {mvc(w5, 2), trelu(), mvc(w5, 2), trelu(), mvfc(), fc(16, true), fc(1, false)};
  return make(m, dims, channels, std::move(layers));
}

NetworkSpec sequence_network(const ManifoldId& m, const std::vector<int>& dims, int channels,
                             int classes) {
  const std::vector<int> w3(dims.size(), 3);
  json layers = {mvc(w3, 4), trelu(),          mvc(w3, 4),          trelu(),
                 mvfc(),     fc(32, true), fc(classes, false), softmax()};
  return make(m, dims, channels, std::move(layers));
}

}  // namespace

ExperimentPreset experiment_preset(std::string_view name) {
  ExperimentPreset p;
  p.name = std::string(name);
  p.dataset = dataset_preset(name);
  const DatasetSpec& d = p.dataset;
  switch (d.task) {
    case TaskKind::SpdImageClass:
      p.network = image_class_network(ManifoldId::spd(3), d.dims, 1, d.classes);
      p.train.epochs = 6;
      p.train.lr = 0.005;
      p.train.batch_size = 20;
      p.train.folds = 10;
      break;
    case TaskKind::SpdRegression:
      p.network = regression_network(ManifoldId::spd(3), d.dims, 1);
      p.train.epochs = 25;
      p.train.lr = 0.02;
      p.train.lr_decay = 0.9;
      p.train.batch_size = 20;
      p.train.folds = 5;
      break;
    case TaskKind::SpdSequenceAngle:
      p.network = sequence_network(ManifoldId::spd(4), d.dims, 1, d.classes);
      p.train.epochs = 20;
      p.train.lr = 0.01;
      p.train.batch_size = 10;
      p.train.folds = 5;
      break;
  }
  return p;
}

NetworkSpec default_network(const Dataset& data) {
  switch (data.task) {
    case TaskKind::SpdImageClass:
      return image_class_network(data.manifold, data.dims, data.channels, data.classes);
    case TaskKind::SpdRegression:
      return regression_network(data.manifold, data.dims, data.channels);
    case TaskKind::SpdSequenceAngle:
      return sequence_network(data.manifold, data.dims, data.channels, data.classes);
  }
  throw ValidationError("unknown task");
}

}  // namespace mvcnet
