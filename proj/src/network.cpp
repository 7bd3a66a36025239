#include "mvcnet/network.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>

#include "mvcnet/errors.hpp"

namespace mvcnet {

namespace {

using nlohmann::json;

struct Shape {
  std::vector<int> dims;
  int channels = 1;
  int sites() const { return std::accumulate(dims.begin(), dims.end(), 1, std::multiplies<>()); }
};

std::string layer_prefix(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "L%02zu", index);
  return buf;
}

std::string mvc_weight_id(std::size_t i) { return layer_prefix(i) + ".mvc.w"; }
std::string trelu_threshold_id(std::size_t i) { return layer_prefix(i) + ".trelu.t"; }
std::string fc_weight_id(std::size_t i) { return layer_prefix(i) + ".fc.W"; }
std::string fc_bias_id(std::size_t i) { return layer_prefix(i) + ".fc.b"; }

[[noreturn]] void layer_error(std::size_t index, const std::string& message) {
  throw ValidationError("network spec: layer " + std::to_string(index) + ": " + message);
}

int window_size(const std::vector<int>& window) {
  return std::accumulate(window.begin(), window.end(), 1, std::multiplies<>());
}

const char* padding_name(Padding p) { return p == Padding::Periodic ? "periodic" : "none"; }

Padding parse_padding(const std::string& s) {
  if (s == "none") return Padding::None;
  if (s == "periodic") return Padding::Periodic;
  throw ValidationError("network spec: unknown padding '" + s + "'");
}

const char* anchor_name(AnchorKind k) {
  switch (k) {
    case AnchorKind::WindowFM: return "window_fm";
    case AnchorKind::CenterPixel: return "center_pixel";
    case AnchorKind::GlobalFM: return "global_fm";
    case AnchorKind::FixedPoint: return "fixed";
  }
  return "?";
}

AnchorKind parse_anchor(const std::string& s) {
  if (s == "window_fm") return AnchorKind::WindowFM;
  if (s == "center_pixel") return AnchorKind::CenterPixel;
  if (s == "global_fm") return AnchorKind::GlobalFM;
  if (s == "fixed") return AnchorKind::FixedPoint;
  throw ValidationError("network spec: unknown anchor policy '" + s + "'");
}

// Walks the spec, calling visit(index, layer, shape-before) and tracking shapes.
// Returns the width of the Euclidean vector entering the first FC layer.
void walk(const NetworkSpec& spec,
          const std::function<void(std::size_t, const LayerSpec&, const Shape&, int)>& visit) {
  Shape shape{spec.input_dims, spec.input_channels};
  int features = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    visit(i, layer, shape, features);
    switch (layer.kind) {
      case LayerKind::Mvc:
        shape.dims = mvc_output_dims(shape.dims, layer.window, layer.stride, layer.padding);
        shape.channels = layer.out_channels;
        break;
      case LayerKind::Mvfc:
        features = shape.sites() * shape.channels;
        break;
      case LayerKind::EuclideanFc:
        features = layer.out_features;
        break;
      default:
        break;
    }
  }
}

Matrix point_to_matrix(const ManifoldPoint& p) {
  return p.manifold.kind == ManifoldKind::Spd ? p.matrix() : Matrix(p.coords);
}

}  // namespace

// ---------------------------------------------------------------------------
// Validation and serialisation

void validate(const NetworkSpec& spec) {
  validate(spec.manifold);
  if (spec.input_dims.empty() || spec.input_dims.size() > 3) {
    throw ValidationError("network spec: input grid rank must be 1, 2 or 3");
  }
  for (int d : spec.input_dims) {
    if (d < 1) throw ValidationError("network spec: input grid sides must be >= 1");
  }
  if (spec.input_channels < 1) throw ValidationError("network spec: input_channels must be >= 1");
  if (spec.layers.empty()) throw ValidationError("network spec: no layers");

  int mvfc_count = 0;
  bool after_mvfc = false;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    switch (layer.kind) {
      case LayerKind::Mvc:
      case LayerKind::TRelu:
        if (after_mvfc) layer_error(i, "manifold layers must precede the MVFC layer");
        break;
      case LayerKind::Mvfc:
        if (++mvfc_count > 1) layer_error(i, "MVFC must appear exactly once");
        after_mvfc = true;
        break;
      case LayerKind::EuclideanFc:
        if (!after_mvfc) layer_error(i, "fully connected layers must follow the MVFC layer");
        if (layer.out_features < 1) layer_error(i, "out_features must be >= 1");
        break;
      case LayerKind::Softmax:
        if (!after_mvfc) layer_error(i, "softmax must follow the MVFC layer");
        if (i + 1 != spec.layers.size()) layer_error(i, "softmax must be the last layer");
        break;
    }
  }
  if (mvfc_count != 1) throw ValidationError("network spec: MVFC must appear exactly once");

  walk(spec, [&](std::size_t i, const LayerSpec& layer, const Shape& shape, int) {
    if (layer.kind != LayerKind::Mvc) return;
    if (layer.out_channels < 1) layer_error(i, "out_channels must be >= 1");
    if (layer.window.size() != shape.dims.size()) layer_error(i, "window rank does not match the grid");
    for (int w : layer.window) {
      if (w < 1 || w % 2 == 0) layer_error(i, "window sides must be odd");
    }
    if (layer.anchor.kind == AnchorKind::FixedPoint) {
      if (!layer.anchor.point || !(layer.anchor.point->manifold == spec.manifold)) {
        layer_error(i, "fixed anchor point missing or on the wrong manifold");
      }
    }
    try {
      mvc_output_dims(shape.dims, layer.window, layer.stride, layer.padding);
    } catch (const ValidationError& e) {
      layer_error(i, e.what());
    }
  });

  const LayerSpec& last = spec.layers.back();
  const bool scalar_head = last.kind == LayerKind::EuclideanFc && last.out_features == 1;
  if (last.kind != LayerKind::Softmax && !scalar_head) {
    layer_error(spec.layers.size() - 1,
                "network must end in softmax (classifier) or a 1-output FC layer (regressor)");
  }
}

json to_json(const NetworkSpec& spec) {
  json layers = json::array();
  for (const LayerSpec& l : spec.layers) {
    json j;
    switch (l.kind) {
      case LayerKind::Mvc:
        j["type"] = "mvc";
        j["window"] = l.window;
        j["stride"] = l.stride;
        j["padding"] = padding_name(l.padding);
        j["out_channels"] = l.out_channels;
        j["anchor"] = anchor_name(l.anchor.kind);
        if (l.anchor.point) {
          j["anchor_point"] = std::vector<double>(l.anchor.point->coords.data(),
                                                  l.anchor.point->coords.data() +
                                                      l.anchor.point->coords.size());
        }
        break;
      case LayerKind::TRelu:
        j["type"] = "trelu";
        j["base"] = l.base == TreluBase::ImageFM ? "image_fm" : "canonical";
        j["threshold"] = l.threshold;
        break;
      case LayerKind::Mvfc:
        j["type"] = "mvfc";
        break;
      case LayerKind::EuclideanFc:
        j["type"] = "fc";
        j["out"] = l.out_features;
        j["relu"] = l.relu;
        break;
      case LayerKind::Softmax:
        j["type"] = "softmax";
        break;
    }
    layers.push_back(std::move(j));
  }
  return json{{"manifold", spec.manifold.name()},
              {"input_dims", spec.input_dims},
              {"input_channels", spec.input_channels},
              {"layers", std::move(layers)}};
}

NetworkSpec network_spec_from_json(const json& j) {
  try {
    NetworkSpec spec;
    spec.manifold = ManifoldId::parse(j.at("manifold").get<std::string>());
    spec.input_dims = j.at("input_dims").get<std::vector<int>>();
    spec.input_channels = j.value("input_channels", 1);
    for (const json& lj : j.at("layers")) {
      LayerSpec l;
      const std::string type = lj.at("type").get<std::string>();
      if (type == "mvc") {
        l.kind = LayerKind::Mvc;
        l.window = lj.at("window").get<std::vector<int>>();
        l.stride = lj.value("stride", std::vector<int>{});
        l.padding = parse_padding(lj.value("padding", std::string("none")));
        l.out_channels = lj.value("out_channels", 1);
        l.anchor.kind = parse_anchor(lj.value("anchor", std::string("window_fm")));
        if (lj.contains("anchor_point")) {
          const auto c = lj.at("anchor_point").get<std::vector<double>>();
          l.anchor.point = ManifoldPoint{spec.manifold, Eigen::Map<const Vector>(c.data(), c.size())};
        }
      } else if (type == "trelu") {
        l.kind = LayerKind::TRelu;
        const std::string base = lj.value("base", std::string("canonical"));
        if (base != "canonical" && base != "image_fm") {
          throw ValidationError("network spec: unknown tReLU base '" + base + "'");
        }
        l.base = base == "image_fm" ? TreluBase::ImageFM : TreluBase::CanonicalBase;
        l.threshold = lj.value("threshold", 0.0);
      } else if (type == "mvfc") {
        l.kind = LayerKind::Mvfc;
      } else if (type == "fc") {
        l.kind = LayerKind::EuclideanFc;
        l.out_features = lj.at("out").get<int>();
        l.relu = lj.value("relu", false);
      } else if (type == "softmax") {
        l.kind = LayerKind::Softmax;
      } else {
        throw ValidationError("network spec: unknown layer type '" + type + "'");
      }
      spec.layers.push_back(std::move(l));
    }
    return spec;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("network spec: ") + e.what());
  }
}

std::map<std::string, std::pair<int, int>> parameter_shapes(const NetworkSpec& spec) {
  std::map<std::string, std::pair<int, int>> shapes;
  walk(spec, [&](std::size_t i, const LayerSpec& layer, const Shape& shape, int features) {
    switch (layer.kind) {
      case LayerKind::Mvc:
        shapes[mvc_weight_id(i)] = {layer.out_channels * shape.channels * window_size(layer.window), 1};
        break;
      case LayerKind::TRelu:
        shapes[trelu_threshold_id(i)] = {1, 1};
        break;
      case LayerKind::EuclideanFc:
        shapes[fc_weight_id(i)] = {layer.out_features, features};
        shapes[fc_bias_id(i)] = {layer.out_features, 1};
        break;
      default:
        break;
    }
  });
  return shapes;
}

std::vector<std::size_t> layer_parameter_counts(const NetworkSpec& spec) {
  std::vector<std::size_t> counts(spec.layers.size(), 0);
  walk(spec, [&](std::size_t i, const LayerSpec& layer, const Shape& shape, int features) {
    switch (layer.kind) {
      case LayerKind::Mvc:
        counts[i] = static_cast<std::size_t>(layer.out_channels) * shape.channels *
                    window_size(layer.window);
        break;
      case LayerKind::TRelu:
        counts[i] = 1;
        break;
      case LayerKind::EuclideanFc:
        counts[i] = static_cast<std::size_t>(layer.out_features) * (features + 1);
        break;
      default:
        break;
    }
  });
  return counts;
}

// ---------------------------------------------------------------------------
// Network

Network Network::build(const NetworkSpec& spec, std::uint64_t seed) {
  validate(spec);
  Rng rng(seed);
  ParameterSet params;
  walk(spec, [&](std::size_t i, const LayerSpec& layer, const Shape& shape, int features) {
    auto uniform = [&](int rows, int cols, double bound) {
      std::uniform_real_distribution<double> u(-bound, bound);
      Matrix m(rows, cols);
      for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r) m(r, c) = u(rng);
      return m;
    };
    switch (layer.kind) {
      case LayerKind::Mvc: {
        const int fan_in = shape.channels * window_size(layer.window);
        params[mvc_weight_id(i)] =
            uniform(layer.out_channels * fan_in, 1, 1.0 / std::sqrt(static_cast<double>(fan_in)));
        break;
      }
      case LayerKind::TRelu:
        params[trelu_threshold_id(i)] = Matrix::Constant(1, 1, layer.threshold);
        break;
      case LayerKind::EuclideanFc: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(features));
        params[fc_weight_id(i)] = uniform(layer.out_features, features, bound);
        params[fc_bias_id(i)] = uniform(layer.out_features, 1, bound);
        break;
      }
      default:
        break;
    }
  });
  return Network(spec, std::move(params), seed);
}

Network::Network(NetworkSpec spec, ParameterSet params, std::uint64_t seed)
    : spec_(std::move(spec)), params_(std::move(params)), seed_(seed) {
  validate(spec_);
  const auto shapes = parameter_shapes(spec_);
  if (shapes.size() != params_.size()) {
    throw ValidationError("network: expected " + std::to_string(shapes.size()) +
                          " parameter tensors, got " + std::to_string(params_.size()));
  }
  for (const auto& [id, shape] : shapes) {
    auto it = params_.find(id);
    if (it == params_.end()) throw ValidationError("network: missing parameter '" + id + "'");
    if (it->second.rows() != shape.first || it->second.cols() != shape.second) {
      throw ValidationError("network: parameter '" + id + "' has the wrong shape");
    }
    if (!it->second.allFinite()) throw ValidationError("network: parameter '" + id + "' is not finite");
  }
}

std::size_t Network::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [id, p] : params_) total += static_cast<std::size_t>(p.size());
  return total;
}

bool Network::is_classifier() const { return spec_.layers.back().kind == LayerKind::Softmax; }

int Network::output_size() const {
  for (auto it = spec_.layers.rbegin(); it != spec_.layers.rend(); ++it) {
    if (it->kind == LayerKind::EuclideanFc) return it->out_features;
  }
  int features = 0;
  walk(spec_, [&](std::size_t, const LayerSpec&, const Shape&, int f) { features = f; });
  return features;
}

namespace {

struct TapedImage {
  std::vector<int> dims;
  int channels = 1;
  std::vector<NodeId> nodes;  // site-major
};

class Recorder {
 public:
  Recorder(Tape& tape, const ManifoldId& manifold, AnchorTrace* trace)
      : tape_(tape), manifold_(manifold), trace_(trace) {}

  Matrix anchor(const std::function<Matrix()>& compute) {
    if (trace_ != nullptr && trace_->mode == AnchorTrace::Mode::Replay) {
      if (trace_->cursor >= trace_->anchors.size()) {
        throw ContractError("anchor trace exhausted during replay");
      }
      return trace_->anchors[trace_->cursor++];
    }
    Matrix m = compute();
    if (trace_ != nullptr) trace_->anchors.push_back(m);
    return m;
  }

  Matrix mean_of(std::span<const NodeId> nodes) {
    return anchor([&] { return tape_.value(tape_.frechet_mean(manifold_, nodes)); });
  }

  TapedImage mvc(const TapedImage& in, const LayerSpec& layer, NodeId weights) {
    const auto out_dims = mvc_output_dims(in.dims, layer.window, layer.stride, layer.padding);
    const auto windows = mvc_window_sites(in.dims, layer.window, layer.stride, layer.padding);
    const int n_win = window_size(layer.window);
    TapedImage out{out_dims, layer.out_channels, {}};
    out.nodes.reserve(windows.size() * layer.out_channels);

    Matrix shared;
    if (layer.anchor.kind == AnchorKind::GlobalFM) shared = mean_of(in.nodes);
    if (layer.anchor.kind == AnchorKind::FixedPoint) shared = point_to_matrix(*layer.anchor.point);

    std::vector<NodeId> gathered(static_cast<std::size_t>(n_win) * in.channels);
    std::vector<NodeId> logs(gathered.size());
    std::vector<int> index(gathered.size());
    for (std::size_t y = 0; y < windows.size(); ++y) {
      for (int c = 0; c < in.channels; ++c) {
        for (int z = 0; z < n_win; ++z) {
          gathered[c * n_win + z] = in.nodes[windows[y][z] * in.channels + c];
        }
      }
      Matrix a;
      switch (layer.anchor.kind) {
        case AnchorKind::WindowFM: a = mean_of(gathered); break;
        case AnchorKind::CenterPixel:
          a = anchor([&] { return tape_.value(gathered[n_win / 2]); });
          break;
        default: a = anchor([&] { return shared; }); break;
      }
      if (manifold_.kind == ManifoldKind::Spd) {
        const EigDecomp d = sym_eig(a);
        const Matrix s = apply_function(d, ScalarFn::Sqrt);
        const Matrix s_inv = apply_function(d, ScalarFn::InvSqrt);
        for (std::size_t k = 0; k < gathered.size(); ++k) {
          logs[k] = tape_.eig_function(ScalarFn::Log, tape_.congruence(s_inv, gathered[k]));
        }
        for (int o = 0; o < layer.out_channels; ++o) {
          for (int c = 0; c < in.channels; ++c)
            for (int z = 0; z < n_win; ++z) index[c * n_win + z] = (o * in.channels + c) * n_win + z;
          const NodeId comb = tape_.lincomb(weights, index, logs);
          out.nodes.push_back(tape_.congruence(s, tape_.eig_function(ScalarFn::Exp, comb)));
        }
      } else {
        const Vector anchor_vec = a.col(0);
        for (std::size_t k = 0; k < gathered.size(); ++k) logs[k] = tape_.sphere_log(anchor_vec, gathered[k]);
        for (int o = 0; o < layer.out_channels; ++o) {
          for (int c = 0; c < in.channels; ++c)
            for (int z = 0; z < n_win; ++z) index[c * n_win + z] = (o * in.channels + c) * n_win + z;
          out.nodes.push_back(tape_.sphere_exp(anchor_vec, tape_.lincomb(weights, index, logs)));
        }
      }
    }
    return out;
  }

  TapedImage trelu(const TapedImage& in, const LayerSpec& layer, NodeId threshold) {
    const bool canonical = layer.base == TreluBase::CanonicalBase;
    const Matrix base = canonical ? point_to_matrix(canonical_point(manifold_)) : mean_of(in.nodes);
    TapedImage out{in.dims, in.channels, {}};
    out.nodes.reserve(in.nodes.size());
    if (manifold_.kind == ManifoldKind::Spd) {
      const EigDecomp d = sym_eig(base);
      const Matrix s = apply_function(d, ScalarFn::Sqrt);
      const Matrix s_inv = apply_function(d, ScalarFn::InvSqrt);
      for (NodeId x : in.nodes) {
        if (canonical) {
          const NodeId v = tape_.eig_function(ScalarFn::Log, x);
          out.nodes.push_back(tape_.eig_function(ScalarFn::Exp, tape_.relu(v, threshold)));
        } else {
          const NodeId l = tape_.eig_function(ScalarFn::Log, tape_.congruence(s_inv, x));
          const NodeId v = tape_.relu(tape_.congruence(s, l), threshold);
          const NodeId e = tape_.eig_function(ScalarFn::Exp, tape_.congruence(s_inv, v));
          out.nodes.push_back(tape_.congruence(s, e));
        }
      }
    } else {
      const Vector b = base.col(0);
      const Matrix basis = sphere_tangent_basis(b);
      const NodeId to_coords = tape_.constant(basis.transpose());
      const NodeId from_coords = tape_.constant(basis);
      for (NodeId x : in.nodes) {
        const NodeId coords = tape_.matmul(to_coords, tape_.sphere_log(b, x));
        const NodeId v = tape_.matmul(from_coords, tape_.relu(coords, threshold));
        out.nodes.push_back(tape_.sphere_exp(b, v));
      }
    }
    return out;
  }

  NodeId mvfc(const TapedImage& in) {
    const NodeId mean = tape_.constant(mean_of(in.nodes));
    std::vector<NodeId> d;
    d.reserve(in.nodes.size());
    for (NodeId x : in.nodes) d.push_back(tape_.distance(manifold_, mean, x));
    return tape_.concat(d);
  }

 private:
  Tape& tape_;
  ManifoldId manifold_;
  AnchorTrace* trace_;
};

}  // namespace

ForwardNodes Network::record(Tape& tape, const ManifoldImage& input, AnchorTrace* trace) const {
  if (!(input.manifold == spec_.manifold) || input.dims != spec_.input_dims ||
      input.channels != spec_.input_channels) {
    throw ValidationError("network: input image shape does not match the network spec");
  }
  if (input.data.size() != static_cast<std::size_t>(input.sites()) * input.channels) {
    throw ValidationError("network: input image data size mismatch");
  }
  if (trace != nullptr) trace->cursor = 0;

  Recorder rec(tape, spec_.manifold, trace);
  TapedImage image{input.dims, input.channels, {}};
  image.nodes.reserve(input.data.size());
  for (const Vector& c : input.data) {
    image.nodes.push_back(tape.constant(point_to_matrix(ManifoldPoint{input.manifold, c})));
  }

  NodeId vec = -1;
  ForwardNodes out;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& layer = spec_.layers[i];
    switch (layer.kind) {
      case LayerKind::Mvc:
        image = rec.mvc(image, layer, tape.parameter(mvc_weight_id(i), params_.at(mvc_weight_id(i))));
        break;
      case LayerKind::TRelu:
        image = rec.trelu(image, layer,
                          tape.parameter(trelu_threshold_id(i), params_.at(trelu_threshold_id(i))));
        break;
      case LayerKind::Mvfc:
        vec = rec.mvfc(image);
        break;
      case LayerKind::EuclideanFc: {
        const NodeId w = tape.parameter(fc_weight_id(i), params_.at(fc_weight_id(i)));
        const NodeId b = tape.parameter(fc_bias_id(i), params_.at(fc_bias_id(i)));
        vec = tape.affine(w, vec, b);
        if (layer.relu) vec = tape.relu(vec);
        break;
      }
      case LayerKind::Softmax:
        out.logits = vec;
        vec = tape.softmax(vec);
        break;
    }
  }
  out.output = vec;
  if (out.logits < 0) out.logits = vec;
  return out;
}

NodeId Network::record_loss(Tape& tape, const ManifoldImage& input, double target,
                            AnchorTrace* trace) const {
  const ForwardNodes nodes = record(tape, input, trace);
  if (is_classifier()) {
    const int label = static_cast<int>(target);
    if (label < 0 || label >= output_size() || static_cast<double>(label) != target) {
      throw ValidationError("network: class label " + std::to_string(target) + " out of range");
    }
    return tape.softmax_cross_entropy(nodes.logits, label);
  }
  return tape.squared_error(nodes.output, target);
}

Vector Network::forward(const ManifoldImage& input) const {
  Tape tape;
  const ForwardNodes nodes = record(tape, input);
  return tape.value(nodes.output).col(0);
}

}  // namespace mvcnet
