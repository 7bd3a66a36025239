#pragma once

// Deterministic synthetic datasets:
//   SpdImageClass    - 2-D fields of 3x3 SPD tensors whose principal direction
//                      follows a class-specific flow pattern
//   SpdRegression    - 40-site 1-D fields of 3x3 SPD tensors, target is the
//                      mean geodesic distance to a fixed reference field
//   SpdSequenceAngle - sequences of SPD(4) covariance descriptors of a blob
//                      moving at a class-specific angle

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mvcnet/layers.hpp"

namespace mvcnet {

enum class TaskKind { SpdImageClass = 0, SpdRegression = 1, SpdSequenceAngle = 2 };

std::string_view to_string(TaskKind t);
TaskKind parse_task(std::string_view s);

struct DatasetSpec {
  TaskKind task = TaskKind::SpdImageClass;
  int n_samples = 200;
  /// Grid shape (image class), site count (regression, {40}) or frame count
  /// (sequence, {F}).
  std::vector<int> dims{8, 8};
  double sigma = 0.05;
  int classes = 2;
  std::uint64_t seed = 7;
  /// Motion angles in degrees, one per class (sequence task only).
  std::vector<double> angles_deg;
  /// Blob displacement per frame in pixels (sequence task only).
  double speed = 0.25;
};

void validate(const DatasetSpec& spec);

nlohmann::json to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);

/// Named presets: spd-class-small, spd-regression, spd-seq-30-60, spd-seq-10-15,
/// spd-seq-10-15-20.
DatasetSpec dataset_preset(std::string_view name);
std::vector<std::string> dataset_preset_names();

struct LabeledSample {
  ManifoldImage image;
  /// Class index, or the noisy regression target.
  double target = 0.0;
  /// Noise-free value of the generating functional (equals target for classes).
  double clean_target = 0.0;
};

struct Dataset {
  TaskKind task = TaskKind::SpdImageClass;
  ManifoldId manifold;
  std::vector<int> dims;
  int channels = 1;
  int classes = 0;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  std::vector<LabeledSample> samples;

  bool is_classification() const { return task != TaskKind::SpdRegression; }
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

std::vector<LabeledSample> gen_spd_image_class(const DatasetSpec& spec);
std::vector<LabeledSample> gen_spd_regression(const DatasetSpec& spec);
std::vector<LabeledSample> gen_spd_sequence_angle(const DatasetSpec& spec);
Dataset generate_dataset(const DatasetSpec& spec);

/// Template tensor field of one class (sigma = 0 samples equal it).
ManifoldImage class_template(int label, const std::vector<int>& dims);

/// Reference field of the regression task.
ManifoldImage regression_reference(int sites);
/// Mean geodesic distance of a field to the reference field.
double regression_functional(const ManifoldImage& field);

/// Noise-free 3 x 8 x 8 feature frame with the blob centred at (x, y) pixels.
FeatureMap blob_frame(double x, double y);

/// Independent per-sample seed derived from a dataset seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace mvcnet
