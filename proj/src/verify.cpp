#include "mvcnet/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "mvcnet/errors.hpp"
#include "mvcnet/layers.hpp"
#include "mvcnet/network.hpp"
#include "mvcnet/synth.hpp"

namespace mvcnet {

namespace {

using Clock = std::chrono::steady_clock;

constexpr double kRoundTripTol = 1e-9;
constexpr double kDistSymmetryTol = 1e-10;
constexpr double kTriangleSlack = 1e-9;
constexpr double kIndiscernibleTol = 1e-10;
constexpr double kIsometryDistTol = 1e-9;
constexpr double kFrechetEquivTol = 1e-7;
constexpr double kLemmaTol = 1e-8;
constexpr double kRangeEquivTol = 1e-7;
constexpr double kShiftEquivTol = 1e-9;
constexpr double kCollapseTol = 1e-8;
constexpr double kControlGap = 1e-3;
constexpr double kControlFraction = 0.95;
constexpr double kWitnessRatio = 10.0;
constexpr double kIdempotenceTol = 1e-10;
constexpr double kMvfcTol = 1e-8;
constexpr double kSoftmaxTol = 1e-12;
constexpr double kGradFloor = 1e-4;

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

std::string vec_str(const Vector& v) {
  std::ostringstream os;
  os << std::setprecision(17) << "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? "," : "") << v(i);
  os << "]";
  return os.str();
}

std::string mat_str(const Matrix& m) {
  Vector flat = Eigen::Map<const Vector>(m.data(), m.size());
  return vec_str(flat) + " (" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
         ", column-major)";
}

// Upper-bounded property: passes when every trial's value is <= tolerance.
class Check {
 public:
  Check(std::string name, const VerifyOptions& options, double tolerance, std::uint64_t stream)
      : rng_(derive_seed(options.seed, stream)), start_(Clock::now()) {
    result_.name = std::move(name);
    result_.manifold = options.manifold.name();
    result_.tolerance = tolerance;
    seed_ = options.seed;
  }

  Rng& rng() { return rng_; }

  /// Records one trial; the witness callback runs only for the first failure.
  void trial(double value, const std::function<std::string()>& witness) {
    ++result_.trials;
    const bool ok = std::isfinite(value) && value <= result_.tolerance;
    if (!std::isfinite(value) || value > result_.worst) result_.worst = value;
    if (!ok) {
      if (result_.failures == 0) {
        result_.witness = "seed " + std::to_string(seed_) + ", trial " +
                          std::to_string(result_.trials - 1) + ", value " + fmt(value) + ": " +
                          witness();
      }
      ++result_.failures;
    }
  }

  void fail(const std::string& message) {
    ++result_.trials;
    if (result_.failures == 0) {
      result_.witness = "seed " + std::to_string(seed_) + ", trial " +
                        std::to_string(result_.trials - 1) + ": " + message;
    }
    ++result_.failures;
  }

  PropertyResult& result() { return result_; }

  PropertyResult finish() {
    result_.passed = result_.failures == 0;
    result_.seconds = std::chrono::duration<double>(Clock::now() - start_).count();
    return result_;
  }

 private:
  PropertyResult result_;
  Rng rng_;
  std::uint64_t seed_ = 0;
  Clock::time_point start_;
};

double rel_diff(const Vector& a, const Vector& b) {
  const double scale = std::max(b.norm(), 1e-12);
  return (a - b).norm() / scale;
}

ManifoldPoint near_point(const ManifoldId& m, double spread, Rng& rng) {
  if (m.kind == ManifoldKind::Spd) return random_point(m, spread, rng);
  return exp_map(random_tangent(canonical_point(m), 2.0 * spread, rng));
}

// Points near the canonical point: within roughly `spread` of it.
ManifoldImage random_image(const ManifoldId& m, std::vector<int> dims, int channels, double spread,
                           Rng& rng) {
  const ManifoldPoint center = canonical_point(m);
  ManifoldImage img = ManifoldImage::filled(center, std::move(dims), channels);
  for (Vector& c : img.data) {
    // Bounded geodesic radius on the sphere keeps every window inside one chart.
    c = m.kind == ManifoldKind::Spd ? random_point(m, spread, rng).coords
                                    : exp_map(random_tangent(center, 2.0 * spread, rng)).coords;
  }
  return img;
}

ManifoldImage image_around(const ManifoldPoint& center, std::vector<int> dims, int channels,
                           double radius, Rng& rng) {
  ManifoldImage img = ManifoldImage::filled(center, std::move(dims), channels);
  for (Vector& c : img.data) c = exp_map(random_tangent(center, radius, rng)).coords;
  return img;
}

Vector random_weights(int count, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Vector w(count);
  for (int i = 0; i < count; ++i) w(i) = u(rng);
  return w;
}

// Same isometry composed with a small extra motion, so both sides of an
// equivariance check disagree when the fault is injected.
IsometryAction skewed(const IsometryAction& phi) {
  IsometryAction out = phi;
  const Eigen::Index n = phi.parameter.rows();
  if (phi.manifold.kind == ManifoldKind::Spd) {
    Matrix e = Matrix::Identity(n, n);
    e(0, n - 1) += 1e-3;
    out.parameter = phi.parameter * e;
  } else {
    Matrix r = Matrix::Identity(n, n);
    const double a = 1e-3;
    r(0, 0) = std::cos(a);
    r(0, 1) = -std::sin(a);
    r(1, 0) = std::sin(a);
    r(1, 1) = std::cos(a);
    out.parameter = phi.parameter * r;
  }
  return out;
}

double spread_for(const ManifoldId& m) { return m.kind == ManifoldKind::Spd ? 0.5 : 0.3; }

const char* anchor_label(AnchorKind k) {
  switch (k) {
    case AnchorKind::WindowFM: return "window_fm";
    case AnchorKind::CenterPixel: return "center_pixel";
    case AnchorKind::GlobalFM: return "global_fm";
    case AnchorKind::FixedPoint: return "fixed";
  }
  return "?";
}


LayerSpec plain_layer(LayerKind kind) {
  LayerSpec l;
  l.kind = kind;
  return l;
}

LayerSpec mvc_layer(std::vector<int> window, int out, Padding padding = Padding::None) {
  LayerSpec l;
  l.kind = LayerKind::Mvc;
  l.window = std::move(window);
  l.out_channels = out;
  l.padding = padding;
  return l;
}

LayerSpec trelu_layer() {
  LayerSpec l;
  l.kind = LayerKind::TRelu;
  return l;
}

LayerSpec fc_layer(int out, bool relu) {
  LayerSpec l;
  l.kind = LayerKind::EuclideanFc;
  l.out_features = out;
  l.relu = relu;
  return l;
}

}  // namespace

nlohmann::json PropertyResult::to_json() const {
  nlohmann::json j{{"name", name},       {"manifold", manifold},   {"trials", trials},
                   {"failures", failures}, {"worst", worst},       {"tolerance", tolerance},
                   {"passed", passed},     {"seconds", seconds}};
  if (!witness.empty()) j["witness"] = witness;
  return j;
}

bool VerifyReport::passed() const {
  return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}

void VerifyReport::append(const VerifyReport& other) {
  results.insert(results.end(), other.results.begin(), other.results.end());
}

nlohmann::json VerifyReport::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : results) j.push_back(r.to_json());
  return {{"passed", passed()}, {"properties", j}};
}

std::string VerifyReport::summary() const {
  std::ostringstream os;
  for (const auto& r : results) {
    os << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(40) << r.name << " "
       << std::setw(10) << r.manifold << " trials=" << r.trials << " failures=" << r.failures
       << " worst=" << fmt(r.worst) << " tol=" << fmt(r.tolerance) << " (" << std::fixed
       << std::setprecision(2) << r.seconds << "s)" << std::defaultfloat << "\n";
    if (!r.passed) os << "     witness: " << r.witness << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Geometry

VerifyReport verify_geometry(const VerifyOptions& o) {
  const ManifoldId& m = o.manifold;
  const double spread = m.kind == ManifoldKind::Spd ? 1.0 : 0.8;
  VerifyReport report;

  {
    Check c("exp_log_round_trip", o, kRoundTripTol, 1);
    for (int t = 0; t < o.trials; ++t) {
      const ManifoldPoint p = random_point(m, spread, c.rng());
      const TangentVector v = random_tangent(p, 1.5, c.rng());
      const TangentVector back = log_map(p, exp_map(v));
      c.trial(rel_diff(back.coords, v.coords), [&] {
        return "p=" + vec_str(p.coords) + " v=" + vec_str(v.coords);
      });
    }
    report.results.push_back(c.finish());
  }
  {
    Check c("log_exp_round_trip", o, kRoundTripTol, 2);
    for (int t = 0; t < o.trials; ++t) {
      const ManifoldPoint p = random_point(m, spread, c.rng());
      const ManifoldPoint q = random_point(m, spread, c.rng());
      const ManifoldPoint back = exp_map(log_map(p, q));
      c.trial(rel_diff(back.coords, q.coords), [&] {
        return "p=" + vec_str(p.coords) + " q=" + vec_str(q.coords);
      });
    }
    report.results.push_back(c.finish());
  }
  {
    Check sym("metric_symmetry", o, kDistSymmetryTol, 3);
    Check tri("metric_triangle_inequality", o, kTriangleSlack, 3);
    Check ind("metric_identity_of_indiscernibles", o, kIndiscernibleTol, 3);
    Rng& rng = sym.rng();
    for (int t = 0; t < o.metric_triples; ++t) {
      const ManifoldPoint p = random_point(m, spread, rng);
      const ManifoldPoint q = random_point(m, spread, rng);
      const ManifoldPoint r = random_point(m, spread, rng);
      const double pq = dist(p, q), qp = dist(q, p), qr = dist(q, r), pr = dist(p, r);
      const auto witness = [&] {
        return "p=" + vec_str(p.coords) + " q=" + vec_str(q.coords) + " r=" + vec_str(r.coords);
      };
      sym.trial(std::abs(pq - qp), witness);
      tri.trial(pr - pq - qr, witness);
      // d(p,p) must vanish and distinct sampled points must be separated.
      const double self = dist(p, p);
      const bool distinct = (p.coords - q.coords).norm() > 1e-8;
      ind.trial(distinct && pq <= kIndiscernibleTol ? 1.0 : self, witness);
    }
    tri.result().tolerance = kTriangleSlack;
    report.results.push_back(sym.finish());
    report.results.push_back(tri.finish());
    report.results.push_back(ind.finish());
  }
  {
    const FrechetOptions fo;
    Check c("frechet_first_order_optimality", o, fo.tol, 4);
    for (int t = 0; t < o.trials; ++t) {
      std::vector<ManifoldPoint> pts;
      const ManifoldPoint center = random_point(m, spread, c.rng());
      for (int i = 0; i < 10; ++i) {
        pts.push_back(exp_map(random_tangent(center, m.kind == ManifoldKind::Spd ? 1.5 : 0.6, c.rng())));
      }
      std::uniform_real_distribution<double> u(0.1, 1.0);
      std::vector<double> w(pts.size());
      double total = 0.0;
      for (double& x : w) total += (x = u(c.rng()));
      for (double& x : w) x /= total;
      try {
        const FrechetResult r = frechet_mean_detailed(pts, w, fo);
        c.trial(frechet_residual(r.mean, pts, w), [&] { return "center=" + vec_str(center.coords); });
      } catch (const Error& e) {
        c.fail(std::string(e.what()) + " center=" + vec_str(center.coords));
      }
    }
    report.results.push_back(c.finish());
  }
  {
    Check c("isometry_distance_invariance", o, kIsometryDistTol, 5);
    for (int t = 0; t < o.trials; ++t) {
      const IsometryAction phi = random_isometry(m, c.rng());
      const ManifoldPoint p = random_point(m, spread, c.rng());
      const ManifoldPoint q = random_point(m, spread, c.rng());
      c.trial(std::abs(dist(apply_isometry(phi, p), apply_isometry(phi, q)) - dist(p, q)),
              [&] { return "phi=" + mat_str(phi.parameter); });
    }
    report.results.push_back(c.finish());
  }
  {
    Check c("isometry_exp_commutation", o, kLemmaTol, 6);
    for (int t = 0; t < o.trials; ++t) {
      const IsometryAction phi = random_isometry(m, c.rng());
      const IsometryAction psi = o.inject_fault ? skewed(phi) : phi;
      const ManifoldPoint p = random_point(m, spread, c.rng());
      const TangentVector v = random_tangent(p, 1.0, c.rng());
      const ManifoldPoint lhs = apply_isometry(phi, exp_map(v));
      const ManifoldPoint rhs = exp_map(apply_isometry_tangent(psi, v));
      c.trial(dist(lhs, rhs), [&] {
        return "phi=" + mat_str(phi.parameter) + " p=" + vec_str(p.coords) + " v=" + vec_str(v.coords);
      });
    }
    report.results.push_back(c.finish());
  }
  {
    Check c("frechet_mean_equivariance", o, kFrechetEquivTol, 7);
    for (int t = 0; t < o.trials; ++t) {
      const IsometryAction phi = random_isometry(m, c.rng());
      const IsometryAction psi = o.inject_fault ? skewed(phi) : phi;
      std::vector<ManifoldPoint> pts, moved;
      for (int i = 0; i < 8; ++i) {
        pts.push_back(near_point(m, spread_for(m), c.rng()));
        moved.push_back(apply_isometry(phi, pts.back()));
      }
      try {
        c.trial(dist(frechet_mean(moved), apply_isometry(psi, frechet_mean(pts))),
                [&] { return "phi=" + mat_str(phi.parameter); });
      } catch (const Error& e) {
        c.fail(e.what());
      }
    }
    report.results.push_back(c.finish());
  }
  return report;
}

// ---------------------------------------------------------------------------
// Layers

VerifyReport verify_layers(const VerifyOptions& o) {
  const ManifoldId& m = o.manifold;
  VerifyReport report;

  std::uint64_t stream = 100;
  for (AnchorKind kind : {AnchorKind::WindowFM, AnchorKind::CenterPixel, AnchorKind::GlobalFM}) {
    Check c(std::string("mvc_range_equivariance[") + anchor_label(kind) + "]", o, kRangeEquivTol,
            stream++);
    for (int t = 0; t < o.trials; ++t) {
      const ManifoldImage img = random_image(m, {5, 5}, 2, spread_for(m), c.rng());
      MvcKernel k{{3, 3}, 2, 2, random_weights(36, 2.0 / 18, c.rng()), {kind, std::nullopt}};
      const IsometryAction phi = random_isometry(m, c.rng());
      const IsometryAction psi = o.inject_fault ? skewed(phi) : phi;
      try {
        const ManifoldImage lhs = mvc_forward(apply_isometry(phi, img), k);
        const ManifoldImage rhs = apply_isometry(psi, mvc_forward(img, k));
        c.trial(max_pixel_distance(lhs, rhs), [&] {
          return "phi=" + mat_str(phi.parameter) + " weights=" + vec_str(k.weights);
        });
      } catch (const Error& e) {
        c.fail(e.what());
      }
    }
    report.results.push_back(c.finish());
  }

  {
    Check c("mvc_cyclic_shift_equivariance", o, kShiftEquivTol, 110);
    if (o.trials > 0) {
      const ManifoldImage img = random_image(m, {8, 8}, 2, spread_for(m), c.rng());
      const MvcKernel k{{3, 3}, 2, 2, random_weights(36, 2.0 / 18, c.rng()), {}};
      const ManifoldImage base = mvc_forward(img, k, {}, Padding::Periodic);
      for (int dy = 0; dy < 8; ++dy) {
        for (int dx = 0; dx < 8; ++dx) {
          const std::vector<int> shift{dy, dx};
          const ManifoldImage lhs = mvc_forward(cyclic_shift(img, shift), k, {}, Padding::Periodic);
          const ManifoldImage rhs = cyclic_shift(base, shift);
          c.trial(max_pixel_distance(lhs, rhs), [&] {
            return "shift=(" + std::to_string(dy) + "," + std::to_string(dx) + ")";
          });
        }
      }
    }
    report.results.push_back(c.finish());
  }

  {
    Check c("two_layer_collapse", o, kCollapseTol, 120);
    Check control("two_layer_collapse_trelu_control", o, 1.0 - kControlFraction, 121);
    std::size_t separated = 0;
    for (int t = 0; t < o.collapse_draws; ++t) {
      // Anchor near the tReLU base so the control's clipping is active on both axes.
      const ManifoldPoint p = near_point(m, 0.05, c.rng());
      const ManifoldImage img = image_around(p, {5, 5}, 1, 0.3, c.rng());
      constexpr int n = 9;
      const Vector w = random_weights(2 * n, 3.0 / n, c.rng());
      const Vector h = random_weights(2, 1.0, c.rng());
      const AnchorPolicy anchor = AnchorPolicy::fixed(p);
      const MvcKernel first{{3, 3}, 1, 2, w, anchor};
      const MvcKernel second{{1, 1}, 2, 1, h, anchor};
      const std::vector<double> wv(w.data(), w.data() + w.size());
      const std::vector<double> tilde = collapse_two_layers(wv, {h(0), h(1)}, anchor, anchor);
      // The collapsed filter reads the same window twice, once per first-layer filter.
      ManifoldImage doubled = ManifoldImage::filled(p, img.dims, 2);
      for (int s = 0; s < img.sites(); ++s) {
        doubled.coords(s, 0) = img.coords(s, 0);
        doubled.coords(s, 1) = img.coords(s, 0);
      }
      const MvcKernel single{{3, 3}, 2, 1, Eigen::Map<const Vector>(tilde.data(), tilde.size()), anchor};
      const ManifoldImage collapsed = mvc_forward(doubled, single);
      const ManifoldImage mid = mvc_forward(img, first);
      const ManifoldImage cascade = mvc_forward(mid, second);
      const auto witness = [&] {
        return "p=" + vec_str(p.coords) + " w=" + vec_str(w) + " h=" + vec_str(h);
      };
      c.trial(max_pixel_distance(cascade, collapsed), witness);
      const ManifoldImage with_trelu = mvc_forward(trelu(mid), second);
      if (max_pixel_distance(with_trelu, collapsed) > kControlGap) ++separated;
    }
    const double missed =
        o.collapse_draws > 0 ? 1.0 - double(separated) / o.collapse_draws : 0.0;
    control.result().trials = o.collapse_draws;
    control.result().worst = missed;
    if (missed > 1.0 - kControlFraction) {
      control.result().failures = 1;
      control.result().witness = "only " + std::to_string(separated) + " of " +
                                 std::to_string(o.collapse_draws) +
                                 " draws separated by more than 1e-3";
    }
    report.results.push_back(c.finish());
    report.results.push_back(control.finish());
  }

  {
    // Lower-bound property: the best ratio found must exceed kWitnessRatio.
    Check c("mvc_non_contraction_witness", o, kWitnessRatio, 130);
    double best = 0.0;
    std::string witness;
    for (int t = 0; t < std::max(o.trials, 1) && o.trials > 0; ++t) {
      const ManifoldPoint p = random_point(m, spread_for(m), c.rng());
      ManifoldImage a = image_around(p, {3}, 1, 0.01, c.rng());
      ManifoldImage b = a;
      b.coords(1, 0) = exp_map(random_tangent(p, 0.01, c.rng())).coords;
      Vector w = Vector::Zero(3);
      w(1) = 100.0;
      const MvcKernel k{{3}, 1, 1, w, AnchorPolicy::fixed(p)};
      const double in = max_pixel_distance(a, b);
      if (in <= 0.0) continue;
      const double ratio = max_pixel_distance(mvc_forward(a, k), mvc_forward(b, k)) / in;
      ++c.result().trials;
      if (ratio > best) {
        best = ratio;
        witness = "anchor=" + vec_str(p.coords) + " x=" + vec_str(a.coords(1, 0)) +
                  " x'=" + vec_str(b.coords(1, 0)) + " weight=100 ratio=" + fmt(ratio);
      }
    }
    c.result().worst = best;
    c.result().witness = witness;
    if (o.trials > 0 && !(best > kWitnessRatio)) c.result().failures = 1;
    report.results.push_back(c.finish());
  }

  {
    Check c("trelu_idempotence", o, kIdempotenceTol, 140);
    for (int t = 0; t < o.trials; ++t) {
      const ManifoldImage img = random_image(m, {10, 10}, 1, spread_for(m), c.rng());
      const ManifoldImage once = trelu(img);
      c.trial(max_pixel_distance(trelu(once), once), [&] { return std::string("random 10x10 image"); });
    }
    report.results.push_back(c.finish());
  }

  {
    Check c("mvfc_isometry_invariance", o, kMvfcTol, 150);
    for (int t = 0; t < o.trials; ++t) {
      std::vector<ManifoldPoint> pts, moved;
      const IsometryAction phi = random_isometry(m, c.rng());
      for (int i = 0; i < 12; ++i) {
        pts.push_back(near_point(m, spread_for(m), c.rng()));
        moved.push_back(apply_isometry(phi, pts.back()));
      }
      c.trial((mvfc(moved) - mvfc(pts)).lpNorm<Eigen::Infinity>(),
              [&] { return "phi=" + mat_str(phi.parameter); });
    }
    report.results.push_back(c.finish());
  }

  {
    Check c("softmax_normalization", o, kSoftmaxTol, 160);
    if (o.trials > 0) {
      NetworkSpec spec;
      spec.manifold = m;
      spec.input_dims = {4, 4};
      spec.input_channels = 1;
      spec.layers = {mvc_layer({3, 3}, 2), plain_layer(LayerKind::TRelu), plain_layer(LayerKind::Mvfc),
                     fc_layer(3, false), plain_layer(LayerKind::Softmax)};
      const Network net = Network::build(spec, derive_seed(o.seed, 161));
      for (int t = 0; t < o.trials; ++t) {
        const Vector prob = net.forward(random_image(m, {4, 4}, 1, spread_for(m), c.rng()));
        c.trial(std::abs(prob.sum() - 1.0), [&] { return "probabilities=" + vec_str(prob); });
      }
    }
    report.results.push_back(c.finish());
  }
  return report;
}

// ---------------------------------------------------------------------------
// Gradients

double gradient_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
}

namespace {

struct GradCase {
  std::string name;
  NetworkSpec spec;
  /// Parameter id prefixes/suffixes whose coordinates are checked; empty = all.
  std::string suffix;
  bool every_coordinate = false;
  bool regression = false;
};

std::vector<GradCase> grad_cases(const ManifoldId& m) {
  auto base = [&](std::vector<LayerSpec> layers) {
    NetworkSpec s;
    s.manifold = m;
    s.input_dims = {4, 4};
    s.input_channels = 2;
    s.layers = std::move(layers);
    return s;
  };
  const LayerSpec mvfc = plain_layer(LayerKind::Mvfc);
  const LayerSpec softmax = plain_layer(LayerKind::Softmax);
  std::vector<GradCase> out;
  out.push_back({"grad_check[mvc]", base({mvc_layer({3, 3}, 2), mvfc, fc_layer(3, false), softmax}),
                 ".mvc.w"});
  out.push_back({"grad_check[trelu]",
                 base({mvc_layer({3, 3}, 2, Padding::Periodic), trelu_layer(), mvfc, fc_layer(3, false),
                       softmax}),
                 ".trelu.t"});
  out.push_back({"grad_check[fc]",
                 base({mvc_layer({3, 3}, 2), mvfc, fc_layer(4, true), fc_layer(3, false), softmax}),
                 ".fc."});
  out.push_back({"grad_check[network_2layer]",
                 base({mvc_layer({3, 3}, 2, Padding::Periodic), trelu_layer(), mvc_layer({3, 3}, 2),
                       trelu_layer(), mvfc, fc_layer(4, true), fc_layer(3, false), softmax}),
                 "", true});
  out.push_back({"grad_check[network_2layer_regressor]",
                 base({mvc_layer({3, 3}, 2, Padding::Periodic), trelu_layer(), mvc_layer({3, 3}, 2),
                       trelu_layer(), mvfc, fc_layer(4, true), fc_layer(1, false)}),
                 "", true, true});
  return out;
}

double loss_at(const Network& net, const ManifoldImage& img, double target, AnchorTrace& trace) {
  Tape tape;
  trace.mode = AnchorTrace::Mode::Replay;
  const NodeId loss = net.record_loss(tape, img, target, &trace);
  return tape.value(loss)(0, 0);
}

}  // namespace

VerifyReport verify_gradients(const VerifyOptions& o) {
  const ManifoldId& m = o.manifold;
  VerifyReport report;
  std::uint64_t stream = 200;
  for (const GradCase& gc : grad_cases(m)) {
    Check c(gc.name, o, kGradCheckTol, stream++);
    if (o.grad_coordinates <= 0 || o.trials <= 0) {
      report.results.push_back(c.finish());
      continue;
    }
    Network net = Network::build(gc.spec, derive_seed(o.seed, stream + 1000));
    // Move thresholds off zero so the check also covers their scaling path.
    for (auto& [id, value] : net.params()) {
      if (id.ends_with(".trelu.t")) value(0, 0) = -0.05;
    }
    std::vector<std::pair<std::string, Eigen::Index>> coords;
    for (const auto& [id, value] : net.params()) {
      if (!gc.suffix.empty() && id.find(gc.suffix) == std::string::npos) continue;
      for (Eigen::Index k = 0; k < value.size(); ++k) coords.emplace_back(id, k);
    }
    if (coords.empty()) throw ContractError("grad check: no coordinates for " + gc.name);
    // Each check draws a fresh input; every-coordinate cases sweep all of them.
    const std::size_t checks =
        gc.every_coordinate ? coords.size() : static_cast<std::size_t>(o.grad_coordinates);
    const int classes = 3;
    ManifoldImage img;
    double target = 0.0;
    GradBundle grads;
    AnchorTrace trace;
    for (std::size_t t = 0; t < checks; ++t) {
      if (t == 0 || !gc.every_coordinate) {
        img = random_image(m, {4, 4}, 2, spread_for(m), c.rng());
        std::uniform_int_distribution<int> label(0, classes - 1);
        std::uniform_real_distribution<double> value(0.0, 1.0);
        target = gc.regression ? value(c.rng()) : label(c.rng());
        trace = AnchorTrace{};
        Tape tape;
        const NodeId loss = net.record_loss(tape, img, target, &trace);
        grads = tape.backward(loss);
      }
      std::pair<std::string, Eigen::Index> pick;
      if (gc.every_coordinate) {
        pick = coords[t];
      } else {
        std::uniform_int_distribution<std::size_t> which(0, coords.size() - 1);
        pick = coords[which(c.rng())];
      }
      const auto& [id, k] = pick;
      const double analytic = grads.grads.count(id) ? grads.grads.at(id)(k) : 0.0;
      Network plus = net, minus = net;
      plus.params().at(id)(k) += kGradCheckEps;
      minus.params().at(id)(k) -= kGradCheckEps;
      const double numeric =
          (loss_at(plus, img, target, trace) - loss_at(minus, img, target, trace)) / (2 * kGradCheckEps);
      c.trial(gradient_relative_error(analytic, numeric), [&] {
        return "parameter " + id + "[" + std::to_string(k) + "] analytic " + fmt(analytic) +
               " numeric " + fmt(numeric);
      });
    }
    report.results.push_back(c.finish());
  }
  return report;
}

VerifyReport verify_all(const VerifyOptions& o) {
  VerifyReport report = verify_geometry(o);
  report.append(verify_layers(o));
  report.append(verify_gradients(o));
  return report;
}

}  // namespace mvcnet
