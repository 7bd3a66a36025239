#pragma once

// Declarative MVC-net description and its parameterised instance:
//   [MVC | tReLU]* -> MVFC -> [FC]* -> [Softmax]

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mvcnet/adam.hpp"
#include "mvcnet/layers.hpp"
#include "mvcnet/tape.hpp"

namespace mvcnet {

enum class LayerKind { Mvc, TRelu, Mvfc, EuclideanFc, Softmax };

struct LayerSpec {
  LayerKind kind = LayerKind::Mvc;
  // Mvc
  std::vector<int> window;
  std::vector<int> stride;
  Padding padding = Padding::None;
  int out_channels = 1;
  AnchorPolicy anchor;
  // TRelu
  TreluBase base = TreluBase::CanonicalBase;
  double threshold = 0.0;
  // EuclideanFc
  int out_features = 1;
  bool relu = false;
};

struct NetworkSpec {
  ManifoldId manifold;
  std::vector<int> input_dims;
  int input_channels = 1;
  std::vector<LayerSpec> layers;
};

/// Throws ValidationError naming the offending layer index.
void validate(const NetworkSpec& spec);

nlohmann::json to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const nlohmann::json& j);

/// Parameter id -> (rows, cols) implied by a spec, in id order.
std::map<std::string, std::pair<int, int>> parameter_shapes(const NetworkSpec& spec);

/// Anchors of every normal chart a forward pass used, in visiting order.
/// Record mode stores them; Replay mode reuses them instead of recomputing,
/// so a perturbed forward pass differentiates the same stop-gradient function.
struct AnchorTrace {
  enum class Mode { Record, Replay };
  Mode mode = Mode::Record;
  std::vector<Matrix> anchors;
  std::size_t cursor = 0;
};

struct ForwardNodes {
  NodeId output = -1;  // probabilities (classifier) or 1x1 prediction (regressor)
  NodeId logits = -1;  // pre-softmax scores; equals output for regressors
};

class Network {
 public:
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation of MVC and FC tensors.
  static Network build(const NetworkSpec& spec, std::uint64_t seed);
  /// Restores a network from explicit parameters (shapes are checked).
  Network(NetworkSpec spec, ParameterSet params, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }
  std::uint64_t seed() const { return seed_; }

  std::size_t parameter_count() const;
  bool is_classifier() const;
  int output_size() const;

  ForwardNodes record(Tape& tape, const ManifoldImage& input, AnchorTrace* trace = nullptr) const;
  /// Scalar training loss: cross-entropy on logits, or squared error.
  NodeId record_loss(Tape& tape, const ManifoldImage& input, double target,
                     AnchorTrace* trace = nullptr) const;
  /// Class probabilities or a single regression value.
  Vector forward(const ManifoldImage& input) const;

 private:
  NetworkSpec spec_;
  ParameterSet params_;
  std::uint64_t seed_ = 0;
};

/// Per-layer parameter counts, in layer order.
std::vector<std::size_t> layer_parameter_counts(const NetworkSpec& spec);

}  // namespace mvcnet
