#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "mvcnet/adam.hpp"
#include "mvcnet/errors.hpp"
#include "mvcnet/layers.hpp"
#include "mvcnet/tape.hpp"
#include "test_support.hpp"

using namespace mvcnet;
using namespace mvcnet::testing;

namespace {

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

/// Central-difference gradient of `loss_of` with respect to one flat parameter.
Vector numeric_gradient(const Matrix& param, const std::function<double(const Matrix&)>& loss_of) {
  const double eps = 1e-6;
  Vector g(param.size());
  for (Eigen::Index i = 0; i < param.size(); ++i) {
    Matrix plus = param, minus = param;
    plus.data()[i] += eps;
    minus.data()[i] -= eps;
    g(i) = (loss_of(plus) - loss_of(minus)) / (2 * eps);
  }
  return g;
}

double max_rel_err(const Vector& a, const Vector& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a(i) - b(i)) / std::max({std::abs(a(i)), std::abs(b(i)), 1e-4}));
  }
  return worst;
}

}  // namespace

TEST(Tape, AddForwardIsElementwiseSum) {
  Tape t;
  Matrix x(2, 2), y(2, 2);
  x << 1, 2, 3, 4;
  y << 10, 20, 30, 40;
  const NodeId s = t.add(t.constant(x), t.constant(y));
  EXPECT_EQ(t.value(s), x + y);
  EXPECT_EQ(t.primitive(s), Primitive::Add);
  EXPECT_FALSE(t.requires_grad(s));
}

TEST(Tape, ScaleSeedsFactorIntoAdjoint) {
  Tape t;
  const NodeId x = t.parameter("x", scalar(3.0));
  const GradBundle g = t.backward(t.scale(2.0, x));
  EXPECT_DOUBLE_EQ(g.grads.at("x")(0), 2.0);
}

TEST(Tape, TraceGradientIsIdentity) {
  Tape t;
  Rng rng(1);
  const NodeId w = t.parameter("W", random_sym(3, rng));
  const GradBundle g = t.backward(t.trace(w));
  const Matrix grad = Matrix::Map(g.grads.at("W").data(), 3, 3);
  EXPECT_EQ(grad, Matrix::Identity(3, 3));
}

TEST(Tape, SquaredDistanceIsStationaryAtZeroDisplacement) {
  Rng rng(2);
  const Matrix s = random_sym(3, rng);
  Tape t;
  const NodeId eps = t.parameter("eps", scalar(0.0));
  const std::vector<NodeId> terms{t.constant(s)};
  const NodeId x = t.eig_function(ScalarFn::Exp, t.lincomb(eps, {0}, terms));
  const NodeId d = t.distance(ManifoldId::spd(3), t.constant(Matrix::Identity(3, 3)), x);
  const GradBundle g = t.backward(t.matmul(d, d));
  EXPECT_NEAR(t.value(d)(0, 0), 0.0, 1e-14);
  EXPECT_EQ(g.grads.at("eps")(0), 0.0);
}

TEST(Tape, RejectsNonScalarLossAndUnknownNode) {
  Tape t;
  const NodeId x = t.parameter("x", Matrix::Identity(2, 2));
  EXPECT_THROW(t.backward(x), ContractError);
  EXPECT_THROW(t.value(99), ContractError);
}

TEST(Tape, FrechetMeanIsStopGradient) {
  Rng rng(3);
  Tape t;
  const NodeId w = t.parameter("w", scalar(0.3));
  std::vector<NodeId> pts;
  for (int i = 0; i < 3; ++i) {
    const std::vector<NodeId> term{t.constant(random_sym(3, rng))};
    pts.push_back(t.eig_function(ScalarFn::Exp, t.lincomb(w, {0}, term)));
  }
  const NodeId m = t.frechet_mean(ManifoldId::spd(3), pts);
  const GradBundle g = t.backward(t.trace(m));
  EXPECT_EQ(g.grads.at("w")(0), 0.0);
}

TEST(TapeProperty, SpdCompositeMatchesFiniteDifferences) {
  Rng rng(4);
  for (int draw = 0; draw < 20; ++draw) {
    std::vector<Matrix> basis;
    for (int k = 0; k < 3; ++k) basis.push_back(random_sym(3, rng));
    const Matrix g = random_spd(3, rng);
    const Matrix target = random_spd(3, rng);
    Matrix w0(3, 1);
    w0 << 0.3, -0.2, 0.1;
    auto record = [&](Tape& t, const Matrix& w) {
      const NodeId wn = t.parameter("w", w);
      std::vector<NodeId> terms;
      for (const Matrix& b : basis) terms.push_back(t.constant(b));
      const NodeId tangent = t.lincomb(wn, {0, 1, 2}, terms);
      const NodeId x = t.congruence(g, t.eig_function(ScalarFn::Exp, tangent));
      const NodeId logx = t.eig_function(ScalarFn::Log, x);
      const NodeId d = t.distance(ManifoldId::spd(3), t.constant(target), x);
      const NodeId sq = t.eig_function(ScalarFn::Sqrt, x);
      return t.add(t.add(t.matmul(d, d), t.scale(0.1, t.trace(t.matmul(logx, logx)))), t.trace(sq));
    };
    Tape t;
    const GradBundle grads = t.backward(record(t, w0));
    const Vector numeric = numeric_gradient(w0, [&](const Matrix& w) {
      Tape u;
      return u.value(record(u, w))(0, 0);
    });
    EXPECT_LT(max_rel_err(grads.grads.at("w"), numeric), 1e-5) << "draw " << draw;
  }
}

TEST(TapeProperty, SphereCompositeMatchesFiniteDifferences) {
  Rng rng(5);
  for (int draw = 0; draw < 20; ++draw) {
    const ManifoldPoint a = random_point(ManifoldId::sphere(2), 0.3, rng);
    const ManifoldPoint b = random_point(ManifoldId::sphere(2), 0.3, rng);
    const ManifoldPoint c = random_point(ManifoldId::sphere(2), 0.3, rng);
    const Matrix basis = sphere_tangent_basis(a.coords);
    Matrix w0(2, 1);
    w0 << 0.4, -0.3;
    auto record = [&](Tape& t, const Matrix& w) {
      const NodeId wn = t.parameter("w", w);
      const std::vector<NodeId> terms{t.constant(basis.col(0)), t.constant(basis.col(1))};
      const NodeId x = t.sphere_exp(a.coords, t.lincomb(wn, {0, 1}, terms));
      const NodeId v = t.sphere_log(b.coords, x);
      const NodeId d = t.distance(ManifoldId::sphere(2), x, t.constant(c.coords));
      const NodeId vv = t.matmul(t.constant(Matrix::Ones(1, 3)), v);
      return t.add(t.matmul(d, d), t.matmul(vv, vv));
    };
    Tape t;
    const GradBundle grads = t.backward(record(t, w0));
    const Vector numeric = numeric_gradient(w0, [&](const Matrix& w) {
      Tape u;
      return u.value(record(u, w))(0, 0);
    });
    EXPECT_LT(max_rel_err(grads.grads.at("w"), numeric), 1e-5) << "draw " << draw;
  }
}

TEST(TapeProperty, EuclideanHeadMatchesFiniteDifferences) {
  Rng rng(6);
  std::normal_distribution<double> nd;
  for (int draw = 0; draw < 20; ++draw) {
    const Matrix w = Matrix::NullaryExpr(4, 3, [&] { return nd(rng); });
    const Matrix b = Matrix::NullaryExpr(4, 1, [&] { return nd(rng); });
    const Matrix x = Matrix::NullaryExpr(3, 1, [&] { return nd(rng); });
    const Matrix th = scalar(0.3 * nd(rng));
    const int label = draw % 4;
    auto record = [&](Tape& t, const Matrix& wv) {
      const NodeId h = t.relu(t.affine(t.parameter("W", wv), t.constant(x), t.constant(b)),
                              t.constant(th));
      const NodeId parts[] = {h, t.constant(scalar(0.5))};
      const NodeId z = t.concat(parts);
      const NodeId logits = t.affine(t.constant(Matrix::Identity(4, 5)), z, t.constant(Matrix::Zero(4, 1)));
      const NodeId probs = t.softmax(logits);
      return t.add(t.softmax_cross_entropy(logits, label),
                   t.squared_error(t.matmul(t.constant(Matrix::Ones(1, 4)), probs), 0.7));
    };
    Tape t;
    const GradBundle grads = t.backward(record(t, w));
    const Vector numeric = numeric_gradient(w, [&](const Matrix& wv) {
      Tape u;
      return u.value(record(u, wv))(0, 0);
    });
    EXPECT_LT(max_rel_err(grads.grads.at("W"), numeric), 1e-5) << "draw " << draw;
  }
}

TEST(Tape, SoftmaxOutputsSumToOne) {
  Tape t;
  Matrix z(3, 1);
  z << 1000.0, -5.0, 2.0;
  const Matrix p = t.value(t.softmax(t.constant(z)));
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  EXPECT_TRUE(p.allFinite());
}

TEST(GradBundle, ClipRescalesToMaximumNorm) {
  GradBundle g;
  g.grads["a"] = Vector::Constant(4, 3.0);
  EXPECT_DOUBLE_EQ(g.clip(2.0), 6.0);
  EXPECT_NEAR(g.global_norm(), 2.0, 1e-14);
  g.grads["b"] = Vector::Constant(1, std::nan(""));
  EXPECT_FALSE(g.all_finite());
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParameterSet params{{"p", Matrix::Constant(2, 2, 1.5)}};
  GradBundle g;
  g.grads["p"] = Vector::Zero(4);
  AdamState state;
  for (int i = 0; i < 10; ++i) adam_step(params, g, state, AdamConfig{});
  EXPECT_EQ(params.at("p"), Matrix::Constant(2, 2, 1.5));
}

TEST(Adam, ConstantGradientStepsApproachLearningRateTimesSign) {
  ParameterSet params{{"p", Matrix::Zero(2, 1)}};
  GradBundle g;
  g.grads["p"] = Vector(2);
  g.grads["p"] << 0.3, -7.0;
  AdamState state;
  const AdamConfig config{0.01};
  Matrix before = params.at("p");
  for (int i = 0; i < 2000; ++i) {
    before = params.at("p");
    adam_step(params, g, state, config);
  }
  const Matrix step = params.at("p") - before;
  EXPECT_NEAR(step(0), -0.01, 1e-6);
  EXPECT_NEAR(step(1), 0.01, 1e-6);
}

TEST(Adam, ConvergesToQuadraticMinimum) {
  const Vector centre = (Vector(3) << 1.0, -2.0, 0.5).finished();
  const Vector curvature = (Vector(3) << 1.0, 4.0, 0.25).finished();
  ParameterSet params{{"x", Matrix::Zero(3, 1)}};
  AdamState state;
  const AdamConfig config{0.01};
  int steps = 0;
  for (; steps < 5000; ++steps) {
    const Vector x = params.at("x").col(0);
    if ((x - centre).norm() < 1e-6) break;
    GradBundle g;
    g.grads["x"] = 2.0 * curvature.cwiseProduct(x - centre);
    adam_step(params, g, state, config);
  }
  EXPECT_LT((params.at("x").col(0) - centre).norm(), 1e-6) << "after " << steps << " steps";
}

TEST(Adam, RejectsGradientForUnknownParameter) {
  ParameterSet params{{"p", Matrix::Zero(1, 1)}};
  GradBundle g;
  g.grads["q"] = Vector::Zero(1);
  AdamState state;
  EXPECT_THROW(adam_step(params, g, state, AdamConfig{}), ContractError);
}
