#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mvcnet/errors.hpp"
#include "mvcnet/layers.hpp"
#include "mvcnet/network.hpp"
#include "test_support.hpp"

using namespace mvcnet;
using namespace mvcnet::testing;

namespace {

ManifoldImage random_spd_image(std::vector<int> dims, int channels, Rng& rng, double spread = 0.4) {
  ManifoldImage img = ManifoldImage::filled(canonical_point(ManifoldId::spd(3)), dims, channels);
  for (int s = 0; s < img.sites(); ++s)
    for (int c = 0; c < channels; ++c) img.set(s, c, random_point(ManifoldId::spd(3), spread, rng));
  return img;
}

ManifoldImage random_sphere_image(std::vector<int> dims, int channels, Rng& rng) {
  const ManifoldPoint pole = canonical_point(ManifoldId::sphere(2));
  ManifoldImage img = ManifoldImage::filled(pole, dims, channels);
  for (int s = 0; s < img.sites(); ++s)
    for (int c = 0; c < channels; ++c) img.set(s, c, exp_map(random_tangent(pole, 0.5, rng)));
  return img;
}

MvcKernel kernel(std::vector<int> window, int in, int out, std::vector<double> w,
                 AnchorPolicy anchor = {}) {
  MvcKernel k;
  k.window = std::move(window);
  k.in_channels = in;
  k.out_channels = out;
  k.weights = Vector::Map(w.data(), static_cast<Eigen::Index>(w.size()));
  k.anchor = std::move(anchor);
  return k;
}

// Straight-line evaluation of Exp_m(sum_i w_i Log_m x_i) on SPD matrices.
Matrix oracle_combination(const Matrix& m, const std::vector<Matrix>& xs, const std::vector<double>& w) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  const Matrix r = es.operatorSqrt();
  const Matrix ri = es.operatorInverseSqrt();
  Matrix acc = Matrix::Zero(m.rows(), m.cols());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Matrix inner = ri * xs[i] * ri;
    acc += w[i] * oracle_logm(0.5 * (inner + inner.transpose()));
  }
  return r * oracle_expm(acc) * r;
}

// Karcher iteration written out independently of the library.
Matrix oracle_mean(const std::vector<Matrix>& xs) {
  Matrix m = xs[0];
  const std::vector<double> w(xs.size(), 1.0 / xs.size());
  for (int it = 0; it < 500; ++it) {
    const Matrix next = oracle_combination(m, xs, w);
    const double step = (next - m).norm();
    m = 0.5 * (next + next.transpose());
    if (step < 1e-15) break;
  }
  return m;
}

}  // namespace

TEST(MvcForward, UnitOneByOneKernelIsIdentity) {
  Rng rng(1);
  const ManifoldImage img = random_spd_image({4, 4}, 1, rng);
  const ManifoldImage out = mvc_forward(img, kernel({1, 1}, 1, 1, {1.0}));
  EXPECT_LT(max_pixel_distance(img, out), 1e-10);
}

TEST(MvcForward, ConstantImageMapsToItselfForAnyWeights) {
  Rng rng(2);
  const ManifoldPoint p = random_point(ManifoldId::spd(3), 0.5, rng);
  const ManifoldImage img = ManifoldImage::filled(p, {5, 5}, 1);
  const ManifoldImage out = mvc_forward(img, kernel({3, 3}, 1, 1, {2, -1, 0.5, 3, -7, 1, 0, 0.2, 4}));
  for (int s = 0; s < out.sites(); ++s) EXPECT_LT(dist(out.point(s, 0), p), 1e-10);
}

TEST(MvcForward, MatchesStraightLineEvaluationOnThreePixels) {
  Rng rng(3);
  const ManifoldImage img = random_spd_image({3}, 1, rng, 0.6);
  const std::vector<double> w{0.7, -0.4, 1.3};
  std::vector<Matrix> xs;
  for (int s = 0; s < 3; ++s) xs.push_back(img.point(s, 0).matrix());

  const ManifoldImage fm = mvc_forward(img, kernel({3}, 1, 1, w));
  ASSERT_EQ(fm.sites(), 1);
  EXPECT_LE(rel_err(fm.point(0, 0).matrix(), oracle_combination(oracle_mean(xs), xs, w)), 1e-9);

  const ManifoldImage centre = mvc_forward(img, kernel({3}, 1, 1, w, {AnchorKind::CenterPixel, {}}));
  EXPECT_LE(rel_err(centre.point(0, 0).matrix(), oracle_combination(xs[1], xs, w)), 1e-9);
}

TEST(MvcForward, ChannelsShareOneAnchorPerSite) {
  Rng rng(4);
  const ManifoldImage img = random_spd_image({3}, 2, rng);
  const ManifoldPoint anchor = random_point(ManifoldId::spd(3), 0.2, rng);
  // weights[(o * in + c) * window + z]
  const std::vector<double> w{0.1, 0.2, 0.3, -0.4, 0.5, 0.6};
  const ManifoldImage out = mvc_forward(img, kernel({3}, 2, 1, w, AnchorPolicy::fixed(anchor)));
  std::vector<Matrix> xs;
  for (int c = 0; c < 2; ++c)
    for (int s = 0; s < 3; ++s) xs.push_back(img.point(s, c).matrix());
  EXPECT_LE(rel_err(out.point(0, 0).matrix(), oracle_combination(anchor.matrix(), xs, w)), 1e-10);
}

TEST(MvcForward, OutputShapesForPaddingAndStride) {
  const std::vector<int> dims{8, 6}, window{3, 3}, stride{2, 1};
  EXPECT_EQ(mvc_output_dims(dims, window, {}, Padding::None), (std::vector<int>{6, 4}));
  EXPECT_EQ(mvc_output_dims(dims, window, stride, Padding::None), (std::vector<int>{3, 4}));
  EXPECT_EQ(mvc_output_dims(dims, window, {}, Padding::Periodic), (std::vector<int>{8, 6}));
  const std::vector<int> big{9, 9};
  EXPECT_THROW(mvc_output_dims(dims, big, {}, Padding::None), ValidationError);
}

TEST(MvcForwardProperty, RangeEquivarianceForEveryAnchorPolicy) {
  Rng rng(5);
  for (AnchorKind kind : {AnchorKind::WindowFM, AnchorKind::CenterPixel, AnchorKind::GlobalFM}) {
    for (int t = 0; t < 10; ++t) {
      const ManifoldImage img = random_spd_image({4, 4}, 2, rng);
      std::vector<double> w(2 * 2 * 9);
      std::uniform_real_distribution<double> u(-0.2, 0.2);
      for (double& x : w) x = u(rng);
      const MvcKernel k = kernel({3, 3}, 2, 2, w, {kind, {}});
      const IsometryAction phi = random_isometry(ManifoldId::spd(3), rng);
      const ManifoldImage lhs = mvc_forward(apply_isometry(phi, img), k);
      const ManifoldImage rhs = apply_isometry(phi, mvc_forward(img, k));
      EXPECT_LT(max_pixel_distance(lhs, rhs), 1e-7);
    }
  }
}

TEST(MvcForwardProperty, PeriodicShiftEquivariance) {
  Rng rng(6);
  const ManifoldImage img = random_sphere_image({6, 6}, 1, rng);
  const MvcKernel k = kernel({3, 3}, 1, 1, {0.1, -0.2, 0.3, 0.4, 0.5, -0.1, 0.2, 0.1, 0.0});
  const ManifoldImage base = mvc_forward(img, k, {}, Padding::Periodic);
  for (int dy = 0; dy < 6; ++dy)
    for (int dx = 0; dx < 6; ++dx) {
      const std::vector<int> shift{dy, dx};
      const ManifoldImage lhs = mvc_forward(cyclic_shift(img, shift), k, {}, Padding::Periodic);
      EXPECT_LT(max_pixel_distance(lhs, cyclic_shift(base, shift)), 1e-9);
    }
}

TEST(Trelu, NonNegativeLogIsUnchanged) {
  Matrix l(3, 3);
  l << 0.3, 0.1, 0.2, 0.1, 0.0, 0.4, 0.2, 0.4, 0.5;
  const ManifoldPoint x = ManifoldPoint::from_matrix(oracle_expm(l));
  const ManifoldImage img = ManifoldImage::filled(x, {1}, 1);
  EXPECT_LT(dist(trelu(img).point(0, 0), x), 1e-12);
}

TEST(Trelu, AllNegativeLogCollapsesToBase) {
  Matrix s(3, 3);
  s << 0.3, 0.1, 0.2, 0.1, 0.7, 0.4, 0.2, 0.4, 0.5;
  const ManifoldImage img = ManifoldImage::filled(ManifoldPoint::from_matrix(oracle_expm(-s)), {1}, 1);
  EXPECT_LE((trelu(img).point(0, 0).matrix() - Matrix::Identity(3, 3)).norm(), 1e-12);
}

TEST(TreluProperty, IdempotentOnRandomPixels) {
  Rng rng(7);
  const ManifoldImage spd = trelu(random_spd_image({10, 10}, 1, rng));
  EXPECT_LT(max_pixel_distance(trelu(spd), spd), 1e-9);
  const ManifoldImage sph = trelu(random_sphere_image({10, 10}, 1, rng));
  EXPECT_LT(max_pixel_distance(trelu(sph), sph), 1e-9);
}

TEST(Mvfc, IdenticalPointsGiveZeros) {
  Rng rng(8);
  const ManifoldPoint p = random_point(ManifoldId::spd(3), 0.5, rng);
  const std::vector<ManifoldPoint> pts(4, p);
  EXPECT_LT(mvfc(pts).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Mvfc, TwoPointsGiveHalfTheirDistance) {
  Rng rng(9);
  const std::vector<ManifoldPoint> pts{random_point(ManifoldId::spd(3), 0.5, rng),
                                       random_point(ManifoldId::spd(3), 0.5, rng)};
  const Vector d = mvfc(pts);
  const double half = oracle_spd_dist(pts[0].matrix(), pts[1].matrix()) / 2;
  EXPECT_NEAR(d(0), half, 1e-8);
  EXPECT_NEAR(d(1), half, 1e-8);
}

TEST(MvfcProperty, IsometryInvariant) {
  Rng rng(10);
  for (ManifoldId m : {ManifoldId::spd(3), ManifoldId::sphere(2)}) {
    for (int t = 0; t < 30; ++t) {
      std::vector<ManifoldPoint> pts, moved;
      const IsometryAction phi = random_isometry(m, rng);
      for (int i = 0; i < 6; ++i) {
        pts.push_back(random_point(m, m.kind == ManifoldKind::Spd ? 0.5 : 0.2, rng));
        moved.push_back(apply_isometry(phi, pts.back()));
      }
      EXPECT_LT((mvfc(moved) - mvfc(pts)).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(CovarianceBlock, ConstantMapHasZeroCovariance) {
  FeatureMap f{2, 3, 3, std::vector<double>(18)};
  for (int h = 0; h < 3; ++h)
    for (int w = 0; w < 3; ++w) {
      f.at(0, h, w) = 0.5;
      f.at(1, h, w) = -0.25;
    }
  const ManifoldPoint p = covariance_block(f);
  ASSERT_NO_THROW(validate(p));
  const Matrix m = p.matrix();
  EXPECT_NEAR(m(0, 2), 0.5, 1e-15);
  EXPECT_NEAR(m(1, 2), -0.25, 1e-15);
  EXPECT_NEAR(m(0, 1), 0.0, 1e-15);
  EXPECT_GE(sym_eig(m).values(0), 1e-6 - 1e-12);
}

TEST(CovarianceBlock, TwoSampleVariance) {
  FeatureMap f{1, 1, 2, {3.0, -1.0}};
  const Matrix m = covariance_block(f).matrix();
  const double mu = 1.0;
  const double var = ((3.0 - mu) * (3.0 - mu) + (-1.0 - mu) * (-1.0 - mu)) / 2;
  EXPECT_NEAR(m(0, 0), var + 1e-6, 1e-14);
  EXPECT_NEAR(m(0, 1), mu, 1e-15);
  EXPECT_EQ(m(1, 1), 1.0);
}

TEST(CovarianceBlock, MatchesTwoPassComputation) {
  Rng rng(11);
  std::normal_distribution<double> nd;
  FeatureMap f{4, 5, 5, std::vector<double>(100)};
  for (double& v : f.data) v = nd(rng);
  std::vector<double> mean(4, 0.0);
  for (int c = 0; c < 4; ++c) {
    for (int k = 0; k < 25; ++k) mean[c] += f.data[c * 25 + k];
    mean[c] /= 25;
  }
  Matrix cov = Matrix::Zero(4, 4);
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      for (int k = 0; k < 25; ++k) cov(a, b) += (f.data[a * 25 + k] - mean[a]) * (f.data[b * 25 + k] - mean[b]);
      cov(a, b) /= 25;
    }
  const Matrix m = covariance_block(f).matrix();
  for (int a = 0; a < 4; ++a) {
    EXPECT_NEAR(m(a, 4), mean[a], 1e-12);
    for (int b = 0; b < 4; ++b) EXPECT_NEAR(m(a, b), cov(a, b) + (a == b ? 1e-6 : 0.0), 1e-12);
  }
}

TEST(CovarianceBlock, RejectsDegenerateShapes) {
  EXPECT_THROW(covariance_block(FeatureMap{1, 1, 1, {1.0}}), ValidationError);
  EXPECT_THROW(covariance_block(FeatureMap{2, 2, 2, {1.0}}), ValidationError);
}

TEST(CollapseTwoLayers, ZeroSecondWeightKeepsFirstFilter) {
  const ManifoldPoint p = canonical_point(ManifoldId::spd(3));
  const std::vector<double> w{1, 2, 3, 4, 5, 6};
  const auto out = collapse_two_layers(w, {1.0, 0.0}, AnchorPolicy::fixed(p), AnchorPolicy::fixed(p));
  EXPECT_EQ(out, (std::vector<double>{1, 2, 3, 0, 0, 0}));
}

TEST(CollapseTwoLayers, RequiresSharedFixedAnchor) {
  Rng rng(12);
  const ManifoldPoint p = random_point(ManifoldId::spd(3), 0.3, rng);
  const ManifoldPoint q = random_point(ManifoldId::spd(3), 0.3, rng);
  const std::vector<double> w{1, 2};
  EXPECT_THROW(collapse_two_layers(w, {1, 1}, AnchorPolicy::fixed(p), AnchorPolicy::fixed(q)), ContractError);
  EXPECT_THROW(collapse_two_layers(w, {1, 1}, AnchorPolicy{}, AnchorPolicy::fixed(p)), ContractError);
}

TEST(CollapseTwoLayersProperty, CascadeEqualsSingleLayer) {
  Rng rng(13);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  for (int t = 0; t < 20; ++t) {
    const ManifoldPoint p = random_point(ManifoldId::spd(3), 0.1, rng);
    ManifoldImage img = ManifoldImage::filled(p, {4, 4}, 1);
    for (int s = 0; s < img.sites(); ++s) img.set(s, 0, exp_map(random_tangent(p, 0.3, rng)));
    std::vector<double> w(18);
    for (double& x : w) x = u(rng);
    const std::array<double, 2> h{u(rng) * 3, u(rng) * 3};
    const AnchorPolicy anchor = AnchorPolicy::fixed(p);
    const ManifoldImage first = mvc_forward(img, kernel({3, 3}, 1, 2, w, anchor));
    const ManifoldImage cascade = mvc_forward(first, kernel({1, 1}, 2, 1, {h[0], h[1]}, anchor));
    ManifoldImage twin = ManifoldImage::filled(p, {4, 4}, 2);
    for (int s = 0; s < img.sites(); ++s) {
      twin.set(s, 0, img.point(s, 0));
      twin.set(s, 1, img.point(s, 0));
    }
    const auto collapsed = collapse_two_layers(w, h, anchor, anchor);
    const ManifoldImage single = mvc_forward(twin, kernel({3, 3}, 2, 1, collapsed, anchor));
    EXPECT_LT(max_pixel_distance(cascade, single), 1e-8);
  }
}

namespace {

NetworkSpec spec_from(const std::string& text) { return network_spec_from_json(nlohmann::json::parse(text)); }

}  // namespace

TEST(Network, ZeroMvcLayersProducesValidProbabilities) {
  const NetworkSpec spec = spec_from(R"({"manifold":"spd3","input_dims":[3,3],"layers":[
      {"type":"mvfc"},{"type":"fc","out":3},{"type":"softmax"}]})");
  const Network net = Network::build(spec, 1);
  Rng rng(14);
  const Vector p = net.forward(random_spd_image({3, 3}, 1, rng));
  EXPECT_EQ(p.size(), 3);
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  EXPECT_GE(p.minCoeff(), 0.0);
}

TEST(Network, ProbabilitiesSumToOneOverRandomInputs) {
  const NetworkSpec spec = spec_from(R"({"manifold":"spd3","input_dims":[4,4],"layers":[
      {"type":"mvc","window":[3,3],"out_channels":2},{"type":"trelu"},{"type":"mvfc"},
      {"type":"fc","out":4,"relu":true},{"type":"fc","out":3},{"type":"softmax"}]})");
  const Network net = Network::build(spec, 2);
  Rng rng(15);
  for (int t = 0; t < 100; ++t) {
    EXPECT_NEAR(net.forward(random_spd_image({4, 4}, 1, rng)).sum(), 1.0, 1e-12);
  }
}

TEST(Network, ParameterCountMatchesClosedForm) {
  const NetworkSpec spec = spec_from(R"({"manifold":"spd3","input_dims":[8,8],"layers":[
      {"type":"mvc","window":[3,3],"out_channels":2},{"type":"trelu"},
      {"type":"mvc","window":[3,3],"out_channels":2},{"type":"trelu"},
      {"type":"mvc","window":[3,3],"out_channels":2},{"type":"trelu"},
      {"type":"mvc","window":[1,1],"out_channels":2},{"type":"trelu"},
      {"type":"mvc","window":[1,1],"out_channels":2},{"type":"trelu"},
      {"type":"mvfc"},{"type":"fc","out":8,"relu":true},{"type":"fc","out":2},{"type":"softmax"}]})");
  // MVC: out * in * |window|; tReLU: one threshold; FC: out * in + out.
  const std::size_t mvc = 2 * 1 * 9 + 2 * 2 * 9 + 2 * 2 * 9 + 2 * 2 * 1 + 2 * 2 * 1;
  const std::size_t trelu = 5;
  const std::size_t mvfc_features = 2 * 2 * 2;  // 8x8 -> 6x6 -> 4x4 -> 2x2 sites, 2 channels
  const std::size_t fc = (8 * mvfc_features + 8) + (2 * 8 + 2);
  const Network net = Network::build(spec, 3);
  EXPECT_EQ(net.parameter_count(), mvc + trelu + fc);
  std::size_t sum = 0;
  for (std::size_t c : layer_parameter_counts(spec)) sum += c;
  EXPECT_EQ(sum, net.parameter_count());
}

TEST(Network, InitialisationIsBoundedByFanIn) {
  const NetworkSpec spec = spec_from(R"({"manifold":"spd3","input_dims":[5],"layers":[
      {"type":"mvc","window":[3],"out_channels":4},{"type":"mvfc"},{"type":"fc","out":1}]})");
  const Network net = Network::build(spec, 4);
  for (const auto& [id, m] : net.params()) {
    if (id.ends_with(".mvc.w")) EXPECT_LE(m.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(3.0));
    if (id.ends_with(".fc.W")) EXPECT_LE(m.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(12.0));
  }
  EXPECT_EQ(Network::build(spec, 4).params(), net.params());
}

TEST(NetworkSpec, RejectsMisplacedMvfc) {
  EXPECT_THROW(validate(spec_from(R"({"manifold":"spd3","input_dims":[5],"layers":[
      {"type":"fc","out":2},{"type":"mvfc"}]})")), ValidationError);
  EXPECT_THROW(validate(spec_from(R"({"manifold":"spd3","input_dims":[5],"layers":[
      {"type":"mvfc"},{"type":"mvfc"},{"type":"fc","out":2}]})")), ValidationError);
  EXPECT_THROW(validate(spec_from(R"({"manifold":"spd3","input_dims":[5],"layers":[
      {"type":"mvc","window":[3]},{"type":"fc","out":2}]})")), ValidationError);
}

TEST(NetworkSpec, JsonRoundTrip) {
  const NetworkSpec spec = spec_from(R"({"manifold":"sphere2","input_dims":[6,6],"input_channels":2,"layers":[
      {"type":"mvc","window":[3,3],"stride":[2,2],"padding":"periodic","out_channels":3,"anchor":"center_pixel"},
      {"type":"trelu","base":"image_fm","threshold":0.1},{"type":"mvfc"},{"type":"fc","out":2,"relu":false},
      {"type":"softmax"}]})");
  EXPECT_EQ(to_json(network_spec_from_json(to_json(spec))), to_json(spec));
}
