#include "mvcnet/manifold.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

#include "mvcnet/errors.hpp"

namespace mvcnet {

namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kSphereNormTol = 1e-12;
constexpr double kSphereTangentTol = 1e-10;
constexpr double kTinyAngle = 1e-12;
constexpr double kAntipodalTol = 1e-10;

Matrix coords_to_matrix(const Vector& coords, int n) {
  return Eigen::Map<const RowMajorMatrix>(coords.data(), n, n);
}

Vector matrix_to_coords(const Matrix& m) {
  Vector out(m.size());
  Eigen::Map<RowMajorMatrix>(out.data(), m.rows(), m.cols()) = m;
  return out;
}

void require_same_manifold(const ManifoldId& a, const ManifoldId& b, std::string_view what) {
  if (!(a == b)) {
    throw ContractError(std::string(what) + ": manifold mismatch (" + a.name() + " vs " + b.name() +
                        ")");
  }
}

}  // namespace

ManifoldId ManifoldId::spd(int n) {
  ManifoldId m{ManifoldKind::Spd, n};
  validate(m);
  return m;
}

ManifoldId ManifoldId::sphere(int n) {
  ManifoldId m{ManifoldKind::Sphere, n};
  validate(m);
  return m;
}

ManifoldId ManifoldId::parse(std::string_view text) {
  std::string compact;
  for (char c : text) {
    if (c != '(' && c != ')' && c != ' ') compact.push_back(static_cast<char>(std::tolower(c)));
  }
  auto parse_suffix = [&](std::string_view prefix) -> int {
    const std::string_view digits = std::string_view(compact).substr(prefix.size());
    int n = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), n);
    if (ec != std::errc() || ptr != digits.data() + digits.size()) {
      throw ValidationError("manifold: cannot parse dimension in '" + std::string(text) + "'");
    }
    return n;
  };
  if (compact.rfind("spd", 0) == 0) return spd(parse_suffix("spd"));
  if (compact.rfind("sphere", 0) == 0) return sphere(parse_suffix("sphere"));
  throw ValidationError("manifold: unknown manifold '" + std::string(text) + "'");
}

int ManifoldId::coord_size() const { return kind == ManifoldKind::Spd ? n * n : n + 1; }

int ManifoldId::dimension() const { return kind == ManifoldKind::Spd ? n * (n + 1) / 2 : n; }

std::string ManifoldId::name() const {
  return (kind == ManifoldKind::Spd ? "spd(" : "sphere(") + std::to_string(n) + ")";
}

void validate(const ManifoldId& m) {
  if (m.kind == ManifoldKind::Spd && m.n < 2) {
    throw ValidationError("manifold: Spd(n) requires n >= 2, got " + std::to_string(m.n));
  }
  if (m.kind == ManifoldKind::Sphere && m.n < 1) {
    throw ValidationError("manifold: Sphere(n) requires n >= 1, got " + std::to_string(m.n));
  }
}

ManifoldPoint ManifoldPoint::from_matrix(const Matrix& p) {
  if (p.rows() != p.cols()) throw ValidationError("ManifoldPoint: Spd point must be square");
  return {ManifoldId::spd(static_cast<int>(p.rows())), matrix_to_coords(p)};
}

ManifoldPoint ManifoldPoint::on_sphere(const Vector& x) {
  return {ManifoldId::sphere(static_cast<int>(x.size()) - 1), x};
}

Matrix ManifoldPoint::matrix() const { return coords_to_matrix(coords, manifold.n); }

Matrix TangentVector::matrix() const { return coords_to_matrix(coords, anchor.manifold.n); }

void validate(const ManifoldPoint& p) {
  validate(p.manifold);
  if (p.coords.size() != p.manifold.coord_size()) {
    throw ValidationError("ManifoldPoint: expected " + std::to_string(p.manifold.coord_size()) +
                          " coordinates for " + p.manifold.name() + ", got " +
                          std::to_string(p.coords.size()));
  }
  if (!p.coords.allFinite()) throw ValidationError("ManifoldPoint: non-finite coordinates");
  if (p.manifold.kind == ManifoldKind::Spd) {
    require_spd(p.matrix(), "ManifoldPoint");
  } else if (std::abs(p.coords.norm() - 1.0) > kSphereNormTol) {
    std::ostringstream os;
    os << "ManifoldPoint: sphere point has norm " << p.coords.norm();
    throw ValidationError(os.str());
  }
}

void validate(const TangentVector& v) {
  validate(v.anchor);
  if (v.coords.size() != v.anchor.manifold.coord_size()) {
    throw ValidationError("TangentVector: coordinate count does not match the anchor");
  }
  if (!v.coords.allFinite()) throw ValidationError("TangentVector: non-finite coordinates");
  if (v.anchor.manifold.kind == ManifoldKind::Spd) {
    require_symmetric(v.matrix(), "TangentVector");
  } else if (std::abs(v.coords.dot(v.anchor.coords)) > kSphereTangentTol) {
    throw ValidationError("TangentVector: sphere tangent is not orthogonal to its anchor");
  }
}

void validate(const IsometryAction& phi) {
  validate(phi.manifold);
  const int size = phi.manifold.kind == ManifoldKind::Spd ? phi.manifold.n : phi.manifold.n + 1;
  if (phi.parameter.rows() != size || phi.parameter.cols() != size) {
    throw ValidationError("IsometryAction: parameter must be " + std::to_string(size) + "x" +
                          std::to_string(size));
  }
  if (!phi.parameter.allFinite()) throw ValidationError("IsometryAction: non-finite parameter");
  if (phi.manifold.kind == ManifoldKind::Spd) {
    if (std::abs(phi.parameter.determinant()) < 1e-8) {
      throw ValidationError("IsometryAction: congruence matrix is singular");
    }
  } else {
    const Matrix gram = phi.parameter.transpose() * phi.parameter;
    if ((gram - Matrix::Identity(size, size)).norm() > 1e-10) {
      throw ValidationError("IsometryAction: rotation matrix is not orthogonal");
    }
  }
}

ManifoldPoint canonical_point(const ManifoldId& m) {
  validate(m);
  if (m.kind == ManifoldKind::Spd) return ManifoldPoint::from_matrix(Matrix::Identity(m.n, m.n));
  Vector e = Vector::Zero(m.n + 1);
  e(0) = 1.0;
  return {m, e};
}

TangentVector zero_tangent(const ManifoldPoint& anchor) {
  return {anchor, Vector::Zero(anchor.coords.size())};
}

// ---------------------------------------------------------------------------
// NormalChart

NormalChart::NormalChart(const ManifoldPoint& anchor) : anchor_(anchor) {
  if (anchor_.manifold.kind == ManifoldKind::Spd) {
    const EigDecomp d = sym_eig(anchor_.matrix());
    sqrt_ = apply_function(d, ScalarFn::Sqrt);
    invsqrt_ = apply_function(d, ScalarFn::InvSqrt);
  }
}

Matrix NormalChart::log_whitened(const Matrix& q) const {
  return apply_function(sym_eig(invsqrt_ * q * invsqrt_), ScalarFn::Log);
}

Matrix NormalChart::exp_whitened(const Matrix& l) const {
  return symmetrize(sqrt_ * apply_function(sym_eig(l), ScalarFn::Exp) * sqrt_);
}

Vector NormalChart::log(const Vector& q) const {
  const ManifoldId& m = anchor_.manifold;
  if (m.kind == ManifoldKind::Spd) {
    const Matrix l = log_whitened(coords_to_matrix(q, m.n));
    return matrix_to_coords(symmetrize(sqrt_ * l * sqrt_));
  }
  const Vector& p = anchor_.coords;
  const double c = std::clamp(p.dot(q), -1.0, 1.0);
  if (c <= -1.0 + kAntipodalTol) {
    throw ChartError("sphere log: points are antipodal (cut locus)");
  }
  const Vector u = q - c * p;
  const double un = u.norm();
  // atan2 keeps full relative precision for nearby points, unlike acos.
  const double theta = std::atan2(un, c);
  if (theta < kTinyAngle || un == 0.0) return Vector::Zero(q.size());
  return (theta / un) * u;
}

Vector NormalChart::exp(const Vector& v) const {
  const ManifoldId& m = anchor_.manifold;
  if (m.kind == ManifoldKind::Spd) {
    const Matrix vm = coords_to_matrix(v, m.n);
    return matrix_to_coords(exp_whitened(symmetrize(invsqrt_ * vm * invsqrt_)));
  }
  const Vector& p = anchor_.coords;
  const double t = v.norm();
  if (t >= std::numbers::pi) {
    std::ostringstream os;
    os << "sphere exp: tangent norm " << t << " leaves the injectivity radius pi";
    throw ChartError(os.str());
  }
  if (t < kTinyAngle) return p;
  Vector out = std::cos(t) * p + (std::sin(t) / t) * v;
  return out / out.norm();
}

double NormalChart::inner(const Vector& u, const Vector& v) const {
  const ManifoldId& m = anchor_.manifold;
  if (m.kind == ManifoldKind::Spd) {
    const Matrix wu = invsqrt_ * coords_to_matrix(u, m.n) * invsqrt_;
    const Matrix wv = invsqrt_ * coords_to_matrix(v, m.n) * invsqrt_;
    return (wu.array() * wv.array()).sum();
  }
  return u.dot(v);
}

double NormalChart::norm(const Vector& v) const {
  const ManifoldId& m = anchor_.manifold;
  if (m.kind == ManifoldKind::Spd) {
    return (invsqrt_ * coords_to_matrix(v, m.n) * invsqrt_).norm();
  }
  return v.norm();
}

// ---------------------------------------------------------------------------
// Point-level operations

ManifoldPoint exp_map(const TangentVector& v) {
  validate(v);
  NormalChart chart(v.anchor);
  return {v.anchor.manifold, chart.exp(v.coords)};
}

TangentVector log_map(const ManifoldPoint& p, const ManifoldPoint& q) {
  validate(p);
  validate(q);
  require_same_manifold(p.manifold, q.manifold, "log_map");
  NormalChart chart(p);
  return {p, chart.log(q.coords)};
}

double dist(const ManifoldPoint& p, const ManifoldPoint& q) {
  validate(p);
  validate(q);
  require_same_manifold(p.manifold, q.manifold, "dist");
  if (p.manifold.kind == ManifoldKind::Spd) {
    NormalChart chart(p);
    return chart.log_whitened(q.matrix()).norm();
  }
  const double c = std::clamp(p.coords.dot(q.coords), -1.0, 1.0);
  if (c <= -1.0 + kAntipodalTol) throw ChartError("dist: sphere points are antipodal (cut locus)");
  return std::atan2((q.coords - c * p.coords).norm(), c);
}

double metric_inner(const TangentVector& u, const TangentVector& v) {
  validate(u);
  validate(v);
  if (!(u.manifold() == v.manifold()) || u.anchor.coords != v.anchor.coords) {
    throw ContractError("metric_inner: tangent vectors are anchored at different points");
  }
  return NormalChart(u.anchor).inner(u.coords, v.coords);
}

double metric_norm(const TangentVector& v) {
  validate(v);
  return NormalChart(v.anchor).norm(v.coords);
}

// ---------------------------------------------------------------------------
// Frechet mean

namespace {

void check_mean_inputs(std::span<const ManifoldPoint> points, std::span<const double> weights) {
  if (points.empty()) throw ValidationError("frechet_mean: empty point set");
  if (weights.size() != points.size()) {
    throw ValidationError("frechet_mean: " + std::to_string(weights.size()) + " weights for " +
                          std::to_string(points.size()) + " points");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ValidationError("frechet_mean: weights must be finite and nonnegative");
    }
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    std::ostringstream os;
    os << "frechet_mean: weights sum to " << total << ", expected 1";
    throw ValidationError(os.str());
  }
  for (const ManifoldPoint& p : points) {
    require_same_manifold(points.front().manifold, p.manifold, "frechet_mean");
  }
}

// Sphere uniqueness guard: every point within pi/2 of the normalised
// Euclidean mean.
void check_sphere_spread(std::span<const ManifoldPoint> points, std::span<const double> weights) {
  Vector centre = Vector::Zero(points.front().coords.size());
  for (std::size_t i = 0; i < points.size(); ++i) centre += weights[i] * points[i].coords;
  const double len = centre.norm();
  if (len < 1e-12) {
    throw NonUniqueMeanError("frechet_mean: sphere points have a vanishing Euclidean mean");
  }
  centre /= len;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (weights[i] == 0.0) continue;
    const double angle = std::acos(std::clamp(centre.dot(points[i].coords), -1.0, 1.0));
    if (angle >= std::numbers::pi / 2) {
      std::ostringstream os;
      os << "frechet_mean: point " << i << " lies " << angle
         << " rad from the centre, outside the pi/2 uniqueness ball";
      throw NonUniqueMeanError(os.str());
    }
  }
}

Vector weighted_log_sum(const NormalChart& chart, std::span<const ManifoldPoint> points,
                        std::span<const double> weights) {
  Vector sum = Vector::Zero(chart.anchor().coords.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (weights[i] == 0.0) continue;
    sum += weights[i] * chart.log(points[i].coords);
  }
  return sum;
}

}  // namespace

double frechet_residual(const ManifoldPoint& m, std::span<const ManifoldPoint> points,
                        std::span<const double> weights) {
  NormalChart chart(m);
  return chart.norm(weighted_log_sum(chart, points, weights));
}

FrechetResult frechet_mean_detailed(std::span<const ManifoldPoint> points,
                                    std::span<const double> weights,
                                    const FrechetOptions& options) {
  check_mean_inputs(points, weights);
  const ManifoldId manifold = points.front().manifold;
  if (manifold.kind == ManifoldKind::Sphere) check_sphere_spread(points, weights);

  ManifoldPoint mean = points.front();
  double residual = 0.0;
  for (int iter = 0; iter <= options.max_iter; ++iter) {
    NormalChart chart(mean);
    const Vector step = weighted_log_sum(chart, points, weights);
    residual = chart.norm(step);
    if (residual < options.tol) return {mean, residual, iter};
    if (iter == options.max_iter) break;
    mean.coords = chart.exp(step);
  }
  if (residual > 1e3 * options.tol) {
    std::ostringstream os;
    os << "frechet_mean: no convergence after " << options.max_iter
       << " iterations (residual " << residual << ", tol " << options.tol << ")";
    throw ConvergenceError(os.str());
  }
  return {mean, residual, options.max_iter};
}

ManifoldPoint frechet_mean(std::span<const ManifoldPoint> points, std::span<const double> weights,
                           const FrechetOptions& options) {
  return frechet_mean_detailed(points, weights, options).mean;
}

ManifoldPoint frechet_mean(std::span<const ManifoldPoint> points, const FrechetOptions& options) {
  const std::vector<double> w(points.size(), points.empty() ? 0.0 : 1.0 / points.size());
  return frechet_mean(points, w, options);
}

ManifoldPoint frechet_mean_incremental(std::span<const ManifoldPoint> points,
                                       std::span<const double> weights) {
  check_mean_inputs(points, weights);
  if (points.front().manifold.kind == ManifoldKind::Sphere) check_sphere_spread(points, weights);
  ManifoldPoint mean = points.front();
  double seen = weights[0];
  for (std::size_t k = 1; k < points.size(); ++k) {
    seen += weights[k];
    if (weights[k] == 0.0) continue;
    if (seen == weights[k]) {
      mean = points[k];
      continue;
    }
    NormalChart chart(mean);
    mean.coords = chart.exp((weights[k] / seen) * chart.log(points[k].coords));
  }
  return mean;
}

// ---------------------------------------------------------------------------
// Isometries

ManifoldPoint apply_isometry(const IsometryAction& phi, const ManifoldPoint& p) {
  validate(phi);
  require_same_manifold(phi.manifold, p.manifold, "apply_isometry");
  const Matrix& g = phi.parameter;
  if (p.manifold.kind == ManifoldKind::Spd) {
    return {p.manifold, matrix_to_coords(symmetrize(g * p.matrix() * g.transpose()))};
  }
  Vector out = g * p.coords;
  return {p.manifold, out / out.norm()};
}

TangentVector apply_isometry_tangent(const IsometryAction& phi, const TangentVector& v) {
  const ManifoldPoint anchor = apply_isometry(phi, v.anchor);
  const Matrix& g = phi.parameter;
  if (v.manifold().kind == ManifoldKind::Spd) {
    return {anchor, matrix_to_coords(symmetrize(g * v.matrix() * g.transpose()))};
  }
  return {anchor, g * v.coords};
}

IsometryAction identity_action(const ManifoldId& m) {
  const int size = m.kind == ManifoldKind::Spd ? m.n : m.n + 1;
  return {m, Matrix::Identity(size, size)};
}

Matrix random_rotation(int n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix a(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) a(i, j) = normal(rng);
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR();
  for (int j = 0; j < n; ++j) {
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  }
  if (q.determinant() < 0) q.col(0) = -q.col(0);
  return q;
}

IsometryAction random_isometry(const ManifoldId& m, Rng& rng) {
  validate(m);
  if (m.kind == ManifoldKind::Sphere) return {m, random_rotation(m.n + 1, rng)};
  std::uniform_real_distribution<double> scale(-1.0, 1.0);
  Vector s(m.n);
  for (int i = 0; i < m.n; ++i) s(i) = std::exp(scale(rng));
  const Matrix left = random_rotation(m.n, rng);
  const Matrix right = random_rotation(m.n, rng);
  return {m, left * s.asDiagonal() * right};
}

// ---------------------------------------------------------------------------
// Random sampling

Matrix random_symmetric(int n, double spread, Rng& rng) {
  std::uniform_real_distribution<double> u(-spread, spread);
  Matrix a(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      a(i, j) = u(rng);
      a(j, i) = a(i, j);
    }
  }
  return a;
}

ManifoldPoint random_point(const ManifoldId& m, double spread, Rng& rng) {
  validate(m);
  if (!(spread > 0.0)) throw ValidationError("random_point: spread must be positive");
  if (m.kind == ManifoldKind::Spd) {
    return ManifoldPoint::from_matrix(spd_expm(random_symmetric(m.n, spread, rng)));
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector x(m.n + 1);
  for (int i = 0; i <= m.n; ++i) x(i) = spread * normal(rng);
  x(0) += 1.0;
  const double len = x.norm();
  if (len < 1e-300) x(0) = 1.0;
  return {m, x / x.norm()};
}

ManifoldPoint random_point(const ManifoldId& m, double spread, std::uint64_t seed) {
  Rng rng(seed);
  return random_point(m, spread, rng);
}

TangentVector random_tangent(const ManifoldPoint& anchor, double norm_bound, Rng& rng) {
  if (!(norm_bound >= 0.0)) throw ValidationError("random_tangent: norm bound must be >= 0");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const ManifoldId& m = anchor.manifold;
  if (m.kind == ManifoldKind::Spd) {
    Matrix e = random_symmetric(m.n, 1.0, rng);
    const double len = unit(rng) * norm_bound;
    e *= len / e.norm();
    NormalChart chart(anchor);
    const Matrix v = symmetrize(chart.sqrt() * e * chart.sqrt());
    return {anchor, matrix_to_coords(v)};
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector g(m.n + 1);
  for (int i = 0; i <= m.n; ++i) g(i) = normal(rng);
  g -= g.dot(anchor.coords) * anchor.coords;
  const double len = unit(rng) * norm_bound;
  const double gn = g.norm();
  if (gn < 1e-300) return zero_tangent(anchor);
  g *= len / gn;
  g -= g.dot(anchor.coords) * anchor.coords;
  return {anchor, g};
}

TangentVector random_tangent(const ManifoldPoint& anchor, double norm_bound, std::uint64_t seed) {
  Rng rng(seed);
  return random_tangent(anchor, norm_bound, rng);
}

}  // namespace mvcnet
