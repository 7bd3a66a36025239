#include <gtest/gtest.h>

#include <cmath>

#include "mvcnet/errors.hpp"
#include "mvcnet/matrix_kernels.hpp"
#include "test_support.hpp"

using namespace mvcnet;
using namespace mvcnet::testing;

TEST(SymEig, IdentityHasUnitEigenvalues) {
  const EigDecomp d = sym_eig(Matrix::Identity(3, 3));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(d.values(i), 1.0, 1e-14);
  EXPECT_LE((d.vectors.transpose() * d.vectors - Matrix::Identity(3, 3)).norm(), 1e-12);
}

TEST(SymEig, DiagonalInputGivesSortedValuesAndPermutation) {
  Matrix a = Vector::Map(std::vector<double>{3.0, 1.0, 2.0}.data(), 3).asDiagonal();
  const EigDecomp d = sym_eig(a);
  EXPECT_DOUBLE_EQ(d.values(0), 1.0);
  EXPECT_DOUBLE_EQ(d.values(1), 2.0);
  EXPECT_DOUBLE_EQ(d.values(2), 3.0);
  EXPECT_NEAR(d.vectors.cwiseAbs().sum(), 3.0, 1e-12);
}

TEST(SymEig, ReconstructsRandomMatricesOfEverySize) {
  Rng rng(1);
  for (int n = 1; n <= 6; ++n) {
    for (int t = 0; t < 20; ++t) {
      const Matrix a = random_sym(n, rng, 2.0);
      const EigDecomp d = sym_eig(a);
      const Matrix back = d.vectors * d.values.asDiagonal() * d.vectors.transpose();
      EXPECT_LE((back - a).norm(), 1e-10 * std::max(1.0, a.norm())) << "n=" << n;
      EXPECT_LE((d.vectors.transpose() * d.vectors - Matrix::Identity(n, n)).norm(), 1e-12);
      for (int i = 1; i < n; ++i) EXPECT_LE(d.values(i - 1), d.values(i));
    }
  }
}

TEST(SymEig, RejectsAsymmetricInput) {
  Matrix a = Matrix::Identity(2, 2);
  a(0, 1) = 1e-3;
  EXPECT_THROW(sym_eig(a), ValidationError);
}

TEST(MatrixFunctions, TrivialCases) {
  EXPECT_LE((spd_expm(Matrix::Zero(3, 3)) - Matrix::Identity(3, 3)).norm(), 1e-15);
  Matrix p = Matrix::Zero(2, 2);
  p(0, 0) = std::exp(1.0);
  p(1, 1) = std::exp(2.0);
  const Matrix l = spd_logm(p);
  EXPECT_NEAR(l(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(l(1, 1), 2.0, 1e-14);
  EXPECT_NEAR(l(0, 1), 0.0, 1e-15);
}

TEST(MatrixFunctions, SqrtSquaresBackAndInvSqrtInverts) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const Matrix p = random_spd(4, rng, 1.0);
    const Matrix s = spd_sqrtm(p);
    EXPECT_LE(rel_err(s * s, p), 1e-10);
    EXPECT_LE((spd_invsqrtm(p) * s - Matrix::Identity(4, 4)).norm(), 1e-10);
  }
}

TEST(MatrixFunctions, RejectsNonPositiveDefinite) {
  Matrix p = Matrix::Identity(2, 2);
  p(1, 1) = -1.0;
  EXPECT_THROW(spd_logm(p), PositivityError);
  EXPECT_THROW(spd_sqrtm(p), PositivityError);
  p(1, 1) = 1e-12;
  EXPECT_THROW(spd_invsqrtm(p), PositivityError);
}

TEST(MatrixFunctionsProperty, LogOfExpRoundTrip) {
  Rng rng(3);
  std::uniform_real_distribution<double> size(0.1, 10.0);
  for (int t = 0; t < 300; ++t) {
    Matrix a = random_sym(3, rng);
    a *= size(rng) / a.norm();
    EXPECT_LE(rel_err(spd_logm(spd_expm(a)), a), 1e-9);
  }
}

TEST(MatrixFunctionsProperty, ExpOfLogRoundTripUpToConditionMillion) {
  Rng rng(4);
  std::uniform_real_distribution<double> logcond(0.0, std::log(1e6));
  for (int t = 0; t < 300; ++t) {
    const Matrix q = random_rotation(4, rng);
    Vector ev(4);
    const double span = logcond(rng);
    for (int i = 0; i < 4; ++i) ev(i) = std::exp(span * i / 3.0 - span / 2.0);
    const Matrix p = q * ev.asDiagonal() * q.transpose();
    EXPECT_LE(rel_err(spd_expm(spd_logm(p)), p), 1e-9);
  }
}

TEST(DsymApply, IdentityFunctionReturnsDirection) {
  Rng rng(5);
  const Matrix a = random_sym(3, rng);
  const Matrix h = random_sym(3, rng);
  EXPECT_LE((dsym_apply(sym_eig(a), ScalarFn::Identity, h) - h).norm(), 1e-12);
}

TEST(DsymApply, ExpAtZeroIsIdentityMap) {
  Rng rng(6);
  const Matrix h = random_sym(3, rng);
  EXPECT_LE((dsym_apply(sym_eig(Matrix::Zero(3, 3)), ScalarFn::Exp, h) - h).norm(), 1e-14);
}

namespace {

double fd_rel_err(const Matrix& a, const Matrix& h, ScalarFn f) {
  const double eps = 1e-6;
  auto fn = [&](const Matrix& x) {
    return f == ScalarFn::Log ? oracle_logm(x)
           : f == ScalarFn::Exp ? oracle_expm(x)
           : oracle_fn(x, [](double v) { return std::sqrt(v); });
  };
  const Matrix numeric = (fn(a + eps * h) - fn(a - eps * h)) / (2 * eps);
  const Matrix analytic = dsym_apply(sym_eig(a), f, h);
  return rel_err(analytic, numeric);
}

}  // namespace

TEST(DsymApplyProperty, MatchesCentralDifferences) {
  Rng rng(7);
  for (int t = 0; t < 180; ++t) {
    const Matrix a = random_spd(3, rng, 0.7);
    const Matrix h = random_sym(3, rng);
    for (ScalarFn f : {ScalarFn::Log, ScalarFn::Exp, ScalarFn::Sqrt}) {
      EXPECT_LE(fd_rel_err(a, h, f), 1e-5) << "draw " << t << " fn " << to_string(f);
    }
  }
}

TEST(DsymApplyProperty, MatchesCentralDifferencesOnClusteredSpectrum) {
  Rng rng(8);
  std::uniform_real_distribution<double> gap(0.0, 1e-9);
  for (int t = 0; t < 20; ++t) {
    const Matrix q = random_rotation(3, rng);
    Vector ev(3);
    ev << 0.7, 1.3, 1.3 + gap(rng);
    const Matrix a = symmetrize(q * ev.asDiagonal() * q.transpose());
    const Matrix h = random_sym(3, rng);
    for (ScalarFn f : {ScalarFn::Log, ScalarFn::Exp}) {
      EXPECT_LE(fd_rel_err(a, h, f), 1e-5) << "draw " << t << " fn " << to_string(f);
    }
  }
}

TEST(DsymApply, SelfAdjointUnderFrobeniusPairing) {
  Rng rng(9);
  const EigDecomp d = sym_eig(random_spd(4, rng));
  const Matrix h = random_sym(4, rng);
  const Matrix k = random_sym(4, rng);
  const double lhs = (dsym_apply(d, ScalarFn::Log, h).array() * k.array()).sum();
  const double rhs = (h.array() * dsym_apply(d, ScalarFn::Log, k).array()).sum();
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(DividedDifference, MatchesDerivativeForNearEqualArguments) {
  EXPECT_NEAR(divided_difference(ScalarFn::Log, 2.0, 2.0 + 1e-12), 0.5, 1e-10);
  EXPECT_NEAR(divided_difference(ScalarFn::Exp, 1.0, 3.0), (std::exp(1.0) - std::exp(3.0)) / -2.0, 1e-14);
}
