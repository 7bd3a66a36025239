#pragma once

// Named experiment presets: dataset, network and training recipe together.

#include <string>
#include <string_view>
#include <vector>

#include "mvcnet/network.hpp"
#include "mvcnet/synth.hpp"
#include "mvcnet/training.hpp"

namespace mvcnet {

struct ExperimentPreset {
  std::string name;
  DatasetSpec dataset;
  NetworkSpec network;
  TrainConfig train;
};

/// Same names as dataset_preset(). Throws ValidationError on an unknown name.
ExperimentPreset experiment_preset(std::string_view name);

/// Default network for a dataset: the preset architecture adapted to its
/// manifold, grid rank and class count.
NetworkSpec default_network(const Dataset& data);

}  // namespace mvcnet
