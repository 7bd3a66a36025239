#include "mvcnet/matrix_kernels.hpp"

#include <cmath>
#include <sstream>

#include "mvcnet/errors.hpp"

namespace mvcnet {

Matrix EigDecomp::reconstruct() const {
  return vectors * values.asDiagonal() * vectors.transpose();
}

std::string_view to_string(ScalarFn f) {
  switch (f) {
    case ScalarFn::Identity: return "identity";
    case ScalarFn::Exp: return "exp";
    case ScalarFn::Log: return "log";
    case ScalarFn::Sqrt: return "sqrt";
    case ScalarFn::InvSqrt: return "invsqrt";
  }
  return "?";
}

double apply_scalar(ScalarFn f, double x) {
  switch (f) {
    case ScalarFn::Identity: return x;
    case ScalarFn::Exp: return std::exp(x);
    case ScalarFn::Log: return std::log(x);
    case ScalarFn::Sqrt: return std::sqrt(x);
    case ScalarFn::InvSqrt: return 1.0 / std::sqrt(x);
  }
  return x;
}

double apply_scalar_derivative(ScalarFn f, double x) {
  switch (f) {
    case ScalarFn::Identity: return 1.0;
    case ScalarFn::Exp: return std::exp(x);
    case ScalarFn::Log: return 1.0 / x;
    case ScalarFn::Sqrt: return 0.5 / std::sqrt(x);
    case ScalarFn::InvSqrt: return -0.5 / (x * std::sqrt(x));
  }
  return 1.0;
}

double divided_difference(ScalarFn f, double a, double b) {
  const double gap = a - b;
  switch (f) {
    case ScalarFn::Identity:
      return 1.0;
    case ScalarFn::Exp:
      // exp(b) (exp(a-b) - 1) / (a-b); expm1 keeps small gaps exact.
      return std::exp(b) * std::expm1(gap) / gap;
    case ScalarFn::Log:
      return std::log1p(gap / b) / gap;
    case ScalarFn::Sqrt:
      return 1.0 / (std::sqrt(a) + std::sqrt(b));
    case ScalarFn::InvSqrt: {
      const double sa = std::sqrt(a);
      const double sb = std::sqrt(b);
      return -1.0 / (sa * sb * (sa + sb));
    }
  }
  return (apply_scalar(f, a) - apply_scalar(f, b)) / gap;
}

bool is_symmetric(const Matrix& a, double tol) {
  if (a.rows() != a.cols()) return false;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < a.cols(); ++j) {
      const double scale = std::max(1.0, std::abs(a(i, j)));
      if (!(std::abs(a(i, j) - a(j, i)) <= tol * scale)) return false;
    }
  }
  return true;
}

void require_symmetric(const Matrix& a, std::string_view what) {
  if (a.rows() == 0 || a.rows() != a.cols()) {
    std::ostringstream os;
    os << what << ": expected a non-empty square matrix, got " << a.rows() << "x" << a.cols();
    throw ValidationError(os.str());
  }
  if (!a.allFinite()) throw ValidationError(std::string(what) + ": non-finite entries");
  if (!is_symmetric(a)) throw ValidationError(std::string(what) + ": matrix is not symmetric");
}

void require_spd(const Matrix& a, std::string_view what) {
  require_symmetric(a, what);
  const EigDecomp d = sym_eig(a);
  if (d.values(0) < kMinSpdEigenvalue) {
    std::ostringstream os;
    os << what << ": not positive definite (smallest eigenvalue " << d.values(0) << ")";
    throw PositivityError(os.str());
  }
}

Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

namespace {

// Fixed-size solvers avoid heap traffic for the small matrices that dominate.
template <int N>
EigDecomp solve_fixed(const Matrix& a) {
  using Fixed = Eigen::Matrix<double, N, N>;
  const Fixed m = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Fixed> solver(m, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) {
    std::ostringstream os;
    os << "sym_eig: QR iteration did not converge within "
       << Eigen::SelfAdjointEigenSolver<Fixed>::m_maxIterations * N << " sweeps (||A||_F = " << a.norm()
       << ")";
    throw ConvergenceError(os.str());
  }
  return {solver.eigenvalues(), solver.eigenvectors()};
}

}  // namespace

constexpr double kEigAsymmetryTol = 1e-8;

EigDecomp sym_eig(const Matrix& a) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw ValidationError("sym_eig: expected a non-empty square matrix");
  }
  if (!a.allFinite()) throw ValidationError("sym_eig: non-finite entries");
  // Rounding-level asymmetry is folded into the symmetric part; anything
  // larger is a caller error.
  if (!is_symmetric(a, kEigAsymmetryTol)) throw ValidationError("sym_eig: matrix is not symmetric");
  switch (a.rows()) {
    case 2: return solve_fixed<2>(a);
    case 3: return solve_fixed<3>(a);
    case 4: return solve_fixed<4>(a);
    default: break;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrize(a), Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) {
    std::ostringstream os;
    os << "sym_eig: QR iteration did not converge within "
       << Eigen::SelfAdjointEigenSolver<Matrix>::m_maxIterations * a.rows()
       << " sweeps (||A||_F = " << a.norm() << ")";
    throw ConvergenceError(os.str());
  }
  return {solver.eigenvalues(), solver.eigenvectors()};
}

namespace {

void check_domain(const EigDecomp& decomp, ScalarFn f) {
  if (f == ScalarFn::Log || f == ScalarFn::Sqrt || f == ScalarFn::InvSqrt) {
    if (decomp.values(0) < kMinSpdEigenvalue) {
      std::ostringstream os;
      os << "matrix " << to_string(f) << ": eigenvalue " << decomp.values(0)
         << " below positivity floor " << kMinSpdEigenvalue;
      throw PositivityError(os.str());
    }
  }
}

}  // namespace

Matrix apply_function(const EigDecomp& decomp, ScalarFn f) {
  check_domain(decomp, f);
  Vector fv(decomp.values.size());
  for (Eigen::Index i = 0; i < fv.size(); ++i) fv(i) = apply_scalar(f, decomp.values(i));
  return decomp.vectors * fv.asDiagonal() * decomp.vectors.transpose();
}

Matrix spd_expm(const Matrix& v) {
  require_symmetric(v, "spd_expm");
  return apply_function(sym_eig(v), ScalarFn::Exp);
}

Matrix spd_logm(const Matrix& p) {
  require_symmetric(p, "spd_logm");
  return apply_function(sym_eig(p), ScalarFn::Log);
}

Matrix spd_sqrtm(const Matrix& p) {
  require_symmetric(p, "spd_sqrtm");
  return apply_function(sym_eig(p), ScalarFn::Sqrt);
}

Matrix spd_invsqrtm(const Matrix& p) {
  require_symmetric(p, "spd_invsqrtm");
  return apply_function(sym_eig(p), ScalarFn::InvSqrt);
}

Matrix loewner_matrix(const EigDecomp& decomp, ScalarFn f) {
  check_domain(decomp, f);
  const Eigen::Index n = decomp.values.size();
  Matrix l(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    l(i, i) = apply_scalar_derivative(f, decomp.values(i));
    for (Eigen::Index j = 0; j < i; ++j) {
      const double a = decomp.values(i);
      const double b = decomp.values(j);
      const double v = std::abs(a - b) < kLoewnerGap ? apply_scalar_derivative(f, 0.5 * (a + b))
                                                     : divided_difference(f, a, b);
      l(i, j) = v;
      l(j, i) = v;
    }
  }
  return l;
}

Matrix dsym_apply(const EigDecomp& decomp, ScalarFn f, const Matrix& direction) {
  const Eigen::Index n = decomp.values.size();
  if (direction.rows() != n || direction.cols() != n) {
    throw ValidationError("dsym_apply: direction shape does not match the decomposition");
  }
  const Matrix& q = decomp.vectors;
  const Matrix rotated = q.transpose() * direction * q;
  const Matrix scaled = loewner_matrix(decomp, f).cwiseProduct(rotated);
  return q * scaled * q.transpose();
}

}  // namespace mvcnet
