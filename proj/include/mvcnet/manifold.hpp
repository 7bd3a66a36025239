#pragma once

// Riemannian geometry of the two supported manifolds:
//   Spd(n)    - n x n symmetric positive-definite matrices, affine-invariant metric
//   Sphere(n) - unit vectors in R^{n+1}, round metric
//
// Points and tangent vectors carry flat coordinate vectors (row-major n*n
// entries for Spd, n+1 ambient entries for Sphere).

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvcnet/matrix_kernels.hpp"

namespace mvcnet {

using Rng = std::mt19937_64;

enum class ManifoldKind { Spd, Sphere };

struct ManifoldId {
  ManifoldKind kind = ManifoldKind::Spd;
  int n = 2;

  static ManifoldId spd(int n);
  static ManifoldId sphere(int n);
  /// Parses "spd3", "spd(3)", "sphere2", "sphere(2)".
  static ManifoldId parse(std::string_view text);

  /// Length of the flat coordinate vector of a point.
  int coord_size() const;
  /// Intrinsic dimension.
  int dimension() const;
  std::string name() const;

  friend bool operator==(const ManifoldId&, const ManifoldId&) = default;
};

void validate(const ManifoldId& m);

struct ManifoldPoint {
  ManifoldId manifold;
  Vector coords;

  static ManifoldPoint from_matrix(const Matrix& p);
  static ManifoldPoint on_sphere(const Vector& x);
  /// Spd only: the coordinates viewed as a symmetric matrix.
  Matrix matrix() const;
};

struct TangentVector {
  ManifoldPoint anchor;
  Vector coords;

  const ManifoldId& manifold() const { return anchor.manifold; }
  Matrix matrix() const;
};

/// Spd(n): P -> G P G^T for invertible G. Sphere(n): p -> R p for orthogonal R.
struct IsometryAction {
  ManifoldId manifold;
  Matrix parameter;
};

void validate(const ManifoldPoint& p);
void validate(const TangentVector& v);
void validate(const IsometryAction& phi);

/// Identity matrix for Spd, north pole e_1 for Sphere.
ManifoldPoint canonical_point(const ManifoldId& m);
TangentVector zero_tangent(const ManifoldPoint& anchor);

/// Exp/Log/metric at one fixed anchor. Square roots of an Spd anchor are
/// computed once, so repeated calls cost a single eigendecomposition each.
/// Tangent coordinates are ambient (unwhitened). Inputs are not validated.
class NormalChart {
 public:
  explicit NormalChart(const ManifoldPoint& anchor);

  const ManifoldPoint& anchor() const { return anchor_; }
  const ManifoldId& manifold() const { return anchor_.manifold; }

  Vector log(const Vector& q) const;
  Vector exp(const Vector& v) const;
  double norm(const Vector& v) const;
  double inner(const Vector& u, const Vector& v) const;

  /// Spd only: P^{1/2} and P^{-1/2} of the anchor.
  const Matrix& sqrt() const { return sqrt_; }
  const Matrix& invsqrt() const { return invsqrt_; }

  /// Spd only: logm(P^{-1/2} Q P^{-1/2}), the whitened normal coordinates.
  Matrix log_whitened(const Matrix& q) const;
  /// Spd only: P^{1/2} expm(L) P^{1/2}.
  Matrix exp_whitened(const Matrix& l) const;

 private:
  ManifoldPoint anchor_;
  Matrix sqrt_;
  Matrix invsqrt_;
};

ManifoldPoint exp_map(const TangentVector& v);
TangentVector log_map(const ManifoldPoint& p, const ManifoldPoint& q);
double dist(const ManifoldPoint& p, const ManifoldPoint& q);
double metric_inner(const TangentVector& u, const TangentVector& v);
double metric_norm(const TangentVector& v);

struct FrechetOptions {
  double tol = 1e-10;
  int max_iter = 200;
};

struct FrechetResult {
  ManifoldPoint mean;
  /// ||sum_i w_i Log_m x_i|| at the returned point.
  double residual = 0.0;
  int iterations = 0;
};

/// Weighted Frechet mean by the fixed-point (Karcher) iteration
/// m <- Exp_m(sum_i w_i Log_m x_i), started at the first point.
FrechetResult frechet_mean_detailed(std::span<const ManifoldPoint> points,
                                    std::span<const double> weights,
                                    const FrechetOptions& options = {});
ManifoldPoint frechet_mean(std::span<const ManifoldPoint> points,
                           std::span<const double> weights,
                           const FrechetOptions& options = {});
/// Unweighted convenience overload.
ManifoldPoint frechet_mean(std::span<const ManifoldPoint> points,
                           const FrechetOptions& options = {});

/// Single-pass inductive estimator: m_k = Exp_{m_{k-1}}((w_k / W_k) Log_{m_{k-1}} x_k).
/// Cheaper than the fixed-point iteration but only approximately stationary.
ManifoldPoint frechet_mean_incremental(std::span<const ManifoldPoint> points,
                                       std::span<const double> weights);

/// First-order optimality residual ||sum_i w_i Log_m x_i||_m.
double frechet_residual(const ManifoldPoint& m, std::span<const ManifoldPoint> points,
                        std::span<const double> weights);

ManifoldPoint apply_isometry(const IsometryAction& phi, const ManifoldPoint& p);
TangentVector apply_isometry_tangent(const IsometryAction& phi, const TangentVector& v);

IsometryAction identity_action(const ManifoldId& m);
/// Random congruence (Spd) or rotation (Sphere).
IsometryAction random_isometry(const ManifoldId& m, Rng& rng);

ManifoldPoint random_point(const ManifoldId& m, double spread, Rng& rng);
ManifoldPoint random_point(const ManifoldId& m, double spread, std::uint64_t seed);
/// Uniformly random direction; Riemannian norm uniform in [0, norm_bound].
TangentVector random_tangent(const ManifoldPoint& anchor, double norm_bound, Rng& rng);
TangentVector random_tangent(const ManifoldPoint& anchor, double norm_bound, std::uint64_t seed);

Matrix random_symmetric(int n, double spread, Rng& rng);
Matrix random_rotation(int n, Rng& rng);

}  // namespace mvcnet
