#include "mvcnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "mvcnet/errors.hpp"

namespace mvcnet {

namespace {

constexpr double kAnisotropy = 3.0;       // principal eigenvalue of class templates
constexpr double kRegressionNoise = 0.01;  // std of the additive target noise
constexpr double kAmplitudeMin = 0.1;
constexpr double kAmplitudeMax = 0.7;
constexpr int kFrameSize = 8;
constexpr double kBlobWidth = 1.0;
constexpr double kBlobAmplitude = 2.0;
constexpr double kStartX = 1.5;
constexpr double kStartY = 1.0;
constexpr double kStartJitter = 0.1;

void require(bool ok, const std::string& message) {
  if (!ok) throw ValidationError("dataset spec: " + message);
}

Matrix oriented_tensor(double angle, double major) {
  Vector u(3);
  u << std::cos(angle), std::sin(angle), 0.0;
  return Matrix::Identity(3, 3) + (major - 1.0) * u * u.transpose();
}

// (x, y) pixel coordinates of a site: the last axis is x, the one before it y.
std::pair<double, double> site_xy(const std::vector<int>& dims, int site) {
  const int w = dims.back();
  const int x = site % w;
  const int y = dims.size() >= 2 ? (site / w) % dims[dims.size() - 2] : 0;
  return {static_cast<double>(x), static_cast<double>(y)};
}

Matrix rotation_z(double angle) {
  Matrix r = Matrix::Identity(3, 3);
  r(0, 0) = std::cos(angle);
  r(0, 1) = -std::sin(angle);
  r(1, 0) = std::sin(angle);
  r(1, 1) = std::cos(angle);
  return r;
}

}  // namespace

std::string_view to_string(TaskKind t) {
  switch (t) {
    case TaskKind::SpdImageClass: return "spd-image-class";
    case TaskKind::SpdRegression: return "spd-regression";
    case TaskKind::SpdSequenceAngle: return "spd-sequence-angle";
  }
  return "unknown";
}

TaskKind parse_task(std::string_view s) {
  if (s == "spd-image-class") return TaskKind::SpdImageClass;
  if (s == "spd-regression") return TaskKind::SpdRegression;
  if (s == "spd-sequence-angle") return TaskKind::SpdSequenceAngle;
  throw ValidationError("dataset spec: task: unknown task '" + std::string(s) + "'");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 over a combination of the two inputs
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void validate(const DatasetSpec& spec) {
  require(std::isfinite(spec.sigma) && spec.sigma >= 0.0,
          "sigma: must be finite and >= 0 (got " + std::to_string(spec.sigma) + ")");
  require(spec.sigma < std::numbers::pi / 4.0,
          "sigma: must be < pi/4 (got " + std::to_string(spec.sigma) + ")");
  require(!spec.dims.empty() && spec.dims.size() <= 3, "dims: rank must be 1, 2 or 3");
  for (int d : spec.dims) require(d >= 1, "dims: every extent must be >= 1");
  switch (spec.task) {
    case TaskKind::SpdImageClass:
      require(spec.classes >= 2 && spec.classes <= 4, "classes: must be in [2, 4]");
      break;
    case TaskKind::SpdRegression:
      require(spec.dims.size() == 1, "dims: regression fields are 1-D");
      break;
    case TaskKind::SpdSequenceAngle:
      require(spec.dims.size() == 1, "dims: sequences are 1-D (frame count)");
      require(spec.classes >= 2, "classes: must be >= 2");
      require(static_cast<int>(spec.angles_deg.size()) == spec.classes,
              "angles_deg: need one angle per class");
      for (double a : spec.angles_deg) require(std::isfinite(a), "angles_deg: must be finite");
      require(std::isfinite(spec.speed) && spec.speed >= 0.0, "speed: must be finite and >= 0");
      break;
  }
  const int label_count = spec.task == TaskKind::SpdRegression ? 1 : spec.classes;
  require(spec.n_samples >= label_count,
          "n_samples: need at least one sample per class (got " + std::to_string(spec.n_samples) + ")");
}

nlohmann::json to_json(const DatasetSpec& spec) {
  nlohmann::json j;
  j["task"] = std::string(to_string(spec.task));
  j["n_samples"] = spec.n_samples;
  j["dims"] = spec.dims;
  j["sigma"] = spec.sigma;
  j["classes"] = spec.classes;
  j["seed"] = spec.seed;
  if (spec.task == TaskKind::SpdSequenceAngle) {
    j["angles_deg"] = spec.angles_deg;
    j["speed"] = spec.speed;
  }
  return j;
}

DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("dataset spec: expected a JSON object");
  DatasetSpec spec;
  if (j.contains("preset")) spec = dataset_preset(j.at("preset").get<std::string>());
  try {
    if (j.contains("task")) spec.task = parse_task(j.at("task").get<std::string>());
    if (j.contains("n_samples")) spec.n_samples = j.at("n_samples").get<int>();
    if (j.contains("dims")) spec.dims = j.at("dims").get<std::vector<int>>();
    if (j.contains("sigma")) spec.sigma = j.at("sigma").get<double>();
    if (j.contains("classes")) spec.classes = j.at("classes").get<int>();
    if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("angles_deg")) spec.angles_deg = j.at("angles_deg").get<std::vector<double>>();
    if (j.contains("speed")) spec.speed = j.at("speed").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("dataset spec: ") + e.what());
  }
  validate(spec);
  return spec;
}

DatasetSpec dataset_preset(std::string_view name) {
  DatasetSpec s;
  if (name == "spd-class-small") {
    s.task = TaskKind::SpdImageClass;
    s.n_samples = 200;
    s.dims = {8, 8};
    s.sigma = 0.05;
    s.classes = 2;
    s.seed = 7;
  } else if (name == "spd-regression") {
    s.task = TaskKind::SpdRegression;
    s.n_samples = 200;
    s.dims = {40};
    s.sigma = 0.05;
    s.classes = 0;
    s.seed = 11;
  } else if (name == "spd-seq-30-60" || name == "spd-seq-10-15" || name == "spd-seq-10-15-20") {
    s.task = TaskKind::SpdSequenceAngle;
    s.dims = {20};
    s.sigma = 0.03;
    s.seed = 13;
    if (name == "spd-seq-30-60") s.angles_deg = {30.0, 60.0};
    if (name == "spd-seq-10-15") s.angles_deg = {10.0, 15.0};
    if (name == "spd-seq-10-15-20") s.angles_deg = {10.0, 15.0, 20.0};
    s.classes = static_cast<int>(s.angles_deg.size());
    s.n_samples = 100 * s.classes;
  } else {
    throw ValidationError("unknown dataset preset '" + std::string(name) + "'");
  }
  return s;
}

std::vector<std::string> dataset_preset_names() {
  return {"spd-class-small", "spd-regression", "spd-seq-30-60", "spd-seq-10-15",
          "spd-seq-10-15-20"};
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out = *this;
  out.samples.clear();
  out.samples.reserve(indices.size());
  for (std::size_t i : indices) out.samples.push_back(samples.at(i));
  return out;
}

ManifoldImage class_template(int label, const std::vector<int>& dims) {
  const ManifoldId m = ManifoldId::spd(3);
  ManifoldImage img = ManifoldImage::filled(canonical_point(m), dims, 1);
  const double cx = 0.5 * (dims.back() - 1);
  const double cy = dims.size() >= 2 ? 0.5 * (dims[dims.size() - 2] - 1) : 0.0;
  for (int s = 0; s < img.sites(); ++s) {
    const auto [x, y] = site_xy(dims, s);
    const double radial = (x == cx && y == cy) ? 0.0 : std::atan2(y - cy, x - cx);
    double angle = 0.0;
    switch (label) {
      case 0: angle = 0.0; break;
      case 1: angle = radial; break;
      case 2: angle = radial + std::numbers::pi / 2.0; break;
      case 3: angle = std::numbers::pi / 2.0; break;
      default: throw ValidationError("class_template: label out of range");
    }
    img.set(s, 0, ManifoldPoint::from_matrix(oriented_tensor(angle, kAnisotropy)));
  }
  return img;
}

std::vector<LabeledSample> gen_spd_image_class(const DatasetSpec& spec) {
  validate(spec);
  if (spec.task != TaskKind::SpdImageClass) throw ContractError("gen_spd_image_class: wrong task");
  std::vector<ManifoldImage> templates;
  for (int k = 0; k < spec.classes; ++k) templates.push_back(class_template(k, spec.dims));
  std::vector<LabeledSample> out;
  out.reserve(spec.n_samples);
  for (int i = 0; i < spec.n_samples; ++i) {
    Rng rng(derive_seed(spec.seed, i));
    const int label = i % spec.classes;
    ManifoldImage img = templates[label];
    if (spec.sigma > 0.0) {
      for (int s = 0; s < img.sites(); ++s) {
        img.set(s, 0, exp_map(random_tangent(img.point(s, 0), spec.sigma, rng)));
      }
    }
    out.push_back({std::move(img), double(label), double(label)});
  }
  return out;
}

ManifoldImage regression_reference(int sites) {
  const ManifoldId m = ManifoldId::spd(3);
  ManifoldImage ref = ManifoldImage::filled(canonical_point(m), {sites}, 1);
  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 1.5, 1.0, 0.8;
  for (int s = 0; s < sites; ++s) {
    const Matrix r = rotation_z(std::numbers::pi * s / sites);
    ref.set(s, 0, ManifoldPoint::from_matrix(symmetrize(r * d * r.transpose())));
  }
  return ref;
}

double regression_functional(const ManifoldImage& field) {
  const ManifoldImage ref = regression_reference(field.sites());
  double total = 0.0;
  for (int s = 0; s < field.sites(); ++s) total += dist(field.point(s, 0), ref.point(s, 0));
  return total / field.sites();
}

std::vector<LabeledSample> gen_spd_regression(const DatasetSpec& spec) {
  validate(spec);
  if (spec.task != TaskKind::SpdRegression) throw ContractError("gen_spd_regression: wrong task");
  const int sites = spec.dims[0];
  const ManifoldImage ref = regression_reference(sites);
  std::vector<LabeledSample> out;
  out.reserve(spec.n_samples);
  for (int i = 0; i < spec.n_samples; ++i) {
    Rng rng(derive_seed(spec.seed, i));
    std::uniform_real_distribution<double> amplitude(kAmplitudeMin, kAmplitudeMax);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double a = amplitude(rng);
    ManifoldImage img = ref;
    for (int s = 0; s < sites; ++s) {
      const double len = std::max(0.0, a + spec.sigma * normal(rng));
      Matrix e = random_symmetric(3, 1.0, rng);
      e *= len / e.norm();
      const NormalChart chart(ref.point(s, 0));
      img.set(s, 0, ManifoldPoint::from_matrix(chart.exp_whitened(e)));
    }
    const double clean = regression_functional(img);
    out.push_back({std::move(img), clean + kRegressionNoise * normal(rng), clean});
  }
  return out;
}

FeatureMap blob_frame(double x, double y) {
  FeatureMap f{3, kFrameSize, kFrameSize, std::vector<double>(3 * kFrameSize * kFrameSize)};
  const double scale = 1.0 / (kFrameSize - 1);
  for (int h = 0; h < kFrameSize; ++h) {
    for (int w = 0; w < kFrameSize; ++w) {
      const double r2 = (w - x) * (w - x) + (h - y) * (h - y);
      f.at(0, h, w) = kBlobAmplitude * std::exp(-r2 / (2.0 * kBlobWidth * kBlobWidth));
      // Fixed position channels. They are nonlinear in position so that
      // trajectories in different directions are not congruent to each other.
      f.at(1, h, w) = std::cos(std::numbers::pi * w * scale);
      f.at(2, h, w) = std::cos(2.0 * std::numbers::pi * h * scale);
    }
  }
  return f;
}

std::vector<LabeledSample> gen_spd_sequence_angle(const DatasetSpec& spec) {
  validate(spec);
  if (spec.task != TaskKind::SpdSequenceAngle) {
    throw ContractError("gen_spd_sequence_angle: wrong task");
  }
  const int frames = spec.dims[0];
  const ManifoldId m = ManifoldId::spd(4);
  std::vector<LabeledSample> out;
  out.reserve(spec.n_samples);
  for (int i = 0; i < spec.n_samples; ++i) {
    Rng rng(derive_seed(spec.seed, i));
    std::uniform_real_distribution<double> jitter(-kStartJitter, kStartJitter);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int label = i % spec.classes;
    const double angle = spec.angles_deg[label] * std::numbers::pi / 180.0;
    const double x0 = kStartX + jitter(rng);
    const double y0 = kStartY + jitter(rng);
    ManifoldImage seq = ManifoldImage::filled(canonical_point(m), {frames}, 1);
    for (int t = 0; t < frames; ++t) {
      FeatureMap f = blob_frame(x0 + spec.speed * t * std::cos(angle),
                                y0 + spec.speed * t * std::sin(angle));
      if (spec.sigma > 0.0) {
        for (double& v : f.data) v += spec.sigma * normal(rng);
      }
      seq.set(t, 0, covariance_block(f));
    }
    out.push_back({std::move(seq), double(label), double(label)});
  }
  return out;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  validate(spec);
  Dataset d;
  d.task = spec.task;
  d.dims = spec.dims;
  d.channels = 1;
  d.sigma = spec.sigma;
  d.seed = spec.seed;
  switch (spec.task) {
    case TaskKind::SpdImageClass:
      d.manifold = ManifoldId::spd(3);
      d.classes = spec.classes;
      d.samples = gen_spd_image_class(spec);
      break;
    case TaskKind::SpdRegression:
      d.manifold = ManifoldId::spd(3);
      d.classes = 0;
      d.samples = gen_spd_regression(spec);
      break;
    case TaskKind::SpdSequenceAngle:
      d.manifold = ManifoldId::spd(4);
      d.classes = spec.classes;
      d.samples = gen_spd_sequence_angle(spec);
      break;
  }
  return d;
}

}  // namespace mvcnet
