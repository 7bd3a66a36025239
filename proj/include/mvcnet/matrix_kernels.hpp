#pragma once

// Dense symmetric matrix functions built on a single eigendecomposition
// backend: exp/log/sqrt/inverse-sqrt and their Daleckii-Krein directional
// derivatives.

#include <Eigen/Dense>

#include <string_view>

namespace mvcnet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Spectral factorisation A = Q diag(values) Q^T, values ascending.
struct EigDecomp {
  Vector values;
  Matrix vectors;

  Matrix reconstruct() const;
};

/// Scalar functions that can be lifted to symmetric matrices.
enum class ScalarFn { Identity, Exp, Log, Sqrt, InvSqrt };

inline constexpr double kSymmetryTol = 1e-12;
inline constexpr double kMinSpdEigenvalue = 1e-10;
inline constexpr double kLoewnerGap = 1e-8;

std::string_view to_string(ScalarFn f);

double apply_scalar(ScalarFn f, double x);
double apply_scalar_derivative(ScalarFn f, double x);
/// (f(a) - f(b)) / (a - b), evaluated without cancellation; a != b.
double divided_difference(ScalarFn f, double a, double b);

bool is_symmetric(const Matrix& a, double tol = kSymmetryTol);
void require_symmetric(const Matrix& a, std::string_view what);
/// Throws PositivityError unless `a` is symmetric with smallest eigenvalue >= 1e-10.
void require_spd(const Matrix& a, std::string_view what);

Matrix symmetrize(const Matrix& a);

EigDecomp sym_eig(const Matrix& a);

/// Q diag(f(lambda)) Q^T. Checks the domain of f against the spectrum.
Matrix apply_function(const EigDecomp& decomp, ScalarFn f);

Matrix spd_expm(const Matrix& v);
Matrix spd_logm(const Matrix& p);
Matrix spd_sqrtm(const Matrix& p);
Matrix spd_invsqrtm(const Matrix& p);

/// Loewner matrix of f at the eigenvalues of `decomp`.
Matrix loewner_matrix(const EigDecomp& decomp, ScalarFn f);

/// Directional derivative D f(A)[H] = Q (L o (Q^T H Q)) Q^T.
/// The operator is self-adjoint under the Frobenius inner product, so the
/// same call serves as the reverse-mode adjoint.
Matrix dsym_apply(const EigDecomp& decomp, ScalarFn f, const Matrix& direction);

}  // namespace mvcnet
