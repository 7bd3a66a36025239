#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>
#include <string>

#include "mvcnet/binary_io.hpp"
#include "mvcnet/dataset_io.hpp"
#include "mvcnet/errors.hpp"
#include "mvcnet/synth.hpp"
#include "test_support.hpp"

using namespace mvcnet;
using namespace mvcnet::testing;

namespace {

DatasetSpec class_spec(int n, double sigma, int classes = 2) {
  DatasetSpec s = dataset_preset("spd-class-small");
  s.n_samples = n;
  s.sigma = sigma;
  s.classes = classes;
  return s;
}

double image_distance(const ManifoldImage& a, const ManifoldImage& b) {
  double total = 0.0;
  for (int s = 0; s < a.sites(); ++s)
    total += oracle_spd_dist(a.point(s, 0).matrix(), b.point(s, 0).matrix());
  return total;
}

Matrix oracle_reference(int site, int sites) {
  const double t = std::numbers::pi * site / sites;
  Matrix r = Matrix::Identity(3, 3);
  r(0, 0) = std::cos(t);
  r(0, 1) = -std::sin(t);
  r(1, 0) = std::sin(t);
  r(1, 1) = std::cos(t);
  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 1.5, 1.0, 0.8;
  return r * d * r.transpose();
}

}  // namespace

TEST(DatasetSpec, ValidationNamesTheField) {
  DatasetSpec s = class_spec(20, -0.1);
  try {
    validate(s);
    FAIL() << "negative sigma accepted";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("sigma"), std::string::npos);
  }
  s.sigma = std::numbers::pi;
  EXPECT_THROW(validate(s), ValidationError);
  s = class_spec(1, 0.05);
  EXPECT_THROW(validate(s), ValidationError);
  EXPECT_NO_THROW(validate(class_spec(2, 0.05)));
  EXPECT_THROW(dataset_preset("no-such-preset"), ValidationError);
}

TEST(DatasetSpec, JsonRoundTripForEveryPreset) {
  for (const std::string& name : dataset_preset_names()) {
    const DatasetSpec s = dataset_preset(name);
    EXPECT_EQ(to_json(dataset_spec_from_json(to_json(s))), to_json(s)) << name;
  }
}

TEST(ImageClass, ZeroNoiseSamplesEqualTheirTemplate) {
  const Dataset d = generate_dataset(class_spec(12, 0.0, 4));
  for (const LabeledSample& s : d.samples) {
    const ManifoldImage tmpl = class_template(static_cast<int>(s.target), d.dims);
    EXPECT_LT(image_distance(s.image, tmpl), 1e-9);
  }
}

TEST(ImageClass, LabelsAreBalanced) {
  for (int classes = 2; classes <= 4; ++classes) {
    const Dataset d = generate_dataset(class_spec(23, 0.05, classes));
    std::vector<int> counts(classes, 0);
    for (const auto& s : d.samples) ++counts[static_cast<int>(s.target)];
    EXPECT_LE(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()), 1);
  }
}

TEST(ImageClass, NearestNeighbourSeparatesClassesAtPresetNoise) {
  const Dataset d = generate_dataset(class_spec(40, 0.05));
  int correct = 0;
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    double best = 1e300;
    double label = -1;
    for (std::size_t j = 0; j < d.samples.size(); ++j) {
      if (i == j) continue;
      const double dij = image_distance(d.samples[i].image, d.samples[j].image);
      if (dij < best) {
        best = dij;
        label = d.samples[j].target;
      }
    }
    if (label == d.samples[i].target) ++correct;
  }
  EXPECT_EQ(correct, 40);
}

TEST(Regression, ReferenceFieldHasZeroTarget) {
  EXPECT_NEAR(regression_functional(regression_reference(40)), 0.0, 1e-12);
}

TEST(Regression, CleanTargetsMatchIndependentEvaluation) {
  DatasetSpec s = dataset_preset("spd-regression");
  s.n_samples = 20;
  const Dataset d = generate_dataset(s);
  for (const LabeledSample& sample : d.samples) {
    double total = 0.0;
    for (int site = 0; site < 40; ++site)
      total += oracle_spd_dist(sample.image.point(site, 0).matrix(), oracle_reference(site, 40));
    EXPECT_NEAR(sample.clean_target, total / 40, 1e-10);
    EXPECT_TRUE(std::isfinite(sample.target));
    EXPECT_LT(std::abs(sample.target - sample.clean_target), 0.1);
  }
}

TEST(Regression, ReproduciblePerSeed) {
  DatasetSpec s = dataset_preset("spd-regression");
  s.n_samples = 10;
  EXPECT_EQ(encode_dataset(generate_dataset(s)), encode_dataset(generate_dataset(s)));
  DatasetSpec other = s;
  other.seed += 1;
  EXPECT_NE(encode_dataset(generate_dataset(s)), encode_dataset(generate_dataset(other)));
}

TEST(SequenceAngle, ZeroVelocityGivesIdenticalFrames) {
  DatasetSpec s = dataset_preset("spd-seq-30-60");
  s.n_samples = 4;
  s.speed = 0.0;
  s.sigma = 0.0;
  for (const LabeledSample& sample : generate_dataset(s).samples) {
    for (int f = 1; f < sample.image.sites(); ++f) {
      EXPECT_EQ(sample.image.coords(f, 0), sample.image.coords(0, 0));
    }
  }
}

TEST(SequenceAngle, TwoAngleSetYieldsTwoLabels) {
  const Dataset d = generate_dataset(dataset_preset("spd-seq-30-60"));
  std::set<double> labels;
  for (const auto& s : d.samples) labels.insert(s.target);
  EXPECT_EQ(labels, (std::set<double>{0.0, 1.0}));
  EXPECT_EQ(d.manifold, ManifoldId::spd(4));
}

TEST(SequenceAngleProperty, FrameDescriptorsAreSpd) {
  DatasetSpec s = dataset_preset("spd-seq-10-15-20");
  s.n_samples = 500;
  const Dataset d = generate_dataset(s);
  int frames = 0;
  for (const auto& sample : d.samples) {
    for (int f = 0; f < sample.image.sites(); ++f, ++frames) {
      ASSERT_NO_THROW(validate(sample.image.point(f, 0))) << "frame " << frames;
    }
  }
  EXPECT_EQ(frames, 10000);
}

TEST(DatasetIo, RoundTripIsLossless) {
  for (const std::string& name : {std::string("spd-class-small"), std::string("spd-regression"),
                                  std::string("spd-seq-30-60")}) {
    DatasetSpec s = dataset_preset(name);
    s.n_samples = 8;
    const Dataset d = generate_dataset(s);
    const std::string bytes = encode_dataset(d);
    const Dataset back = decode_dataset(bytes);
    EXPECT_EQ(encode_dataset(back), bytes) << name;
    ASSERT_EQ(back.samples.size(), d.samples.size());
    EXPECT_EQ(back.samples[3].image.data, d.samples[3].image.data);
    EXPECT_EQ(back.samples[3].clean_target, d.samples[3].clean_target);
  }
}

TEST(DatasetIo, RejectsCorruptInput) {
  DatasetSpec s = class_spec(4, 0.05);
  const std::string bytes = encode_dataset(generate_dataset(s));
  EXPECT_THROW(decode_dataset(bytes.substr(0, bytes.size() - 1)), ValidationError);
  EXPECT_THROW(decode_dataset(bytes + "x"), ValidationError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_dataset(bad_magic), ValidationError);
}

TEST(DatasetIo, ChecksumIsStableForPreset) {
  const std::string a = checksum_hex(encode_dataset(generate_dataset(dataset_preset("spd-class-small"))));
  const std::string b = checksum_hex(encode_dataset(generate_dataset(dataset_preset("spd-class-small"))));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 16u);
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}
