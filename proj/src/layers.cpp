#include "mvcnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mvcnet/errors.hpp"
#include "mvcnet/parallel.hpp"

namespace mvcnet {

namespace {

int product(std::span<const int> v) {
  return std::accumulate(v.begin(), v.end(), 1, std::multiplies<>());
}

std::vector<int> unravel(int index, std::span<const int> dims) {
  std::vector<int> out(dims.size());
  for (std::size_t k = dims.size(); k-- > 0;) {
    out[k] = index % dims[k];
    index /= dims[k];
  }
  return out;
}

int ravel(std::span<const int> coords, std::span<const int> dims) {
  int index = 0;
  for (std::size_t k = 0; k < dims.size(); ++k) index = index * dims[k] + coords[k];
  return index;
}

std::string describe_site(int site, std::span<const int> dims) {
  const auto c = unravel(site, dims);
  std::ostringstream os;
  os << "(";
  for (std::size_t k = 0; k < c.size(); ++k) os << (k ? "," : "") << c[k];
  os << ")";
  return os.str();
}

std::vector<int> resolve_stride(std::span<const int> stride, std::size_t rank) {
  if (stride.empty()) return std::vector<int>(rank, 1);
  if (stride.size() != rank) throw ValidationError("mvc: stride rank does not match the image");
  for (int s : stride) {
    if (s < 1) throw ValidationError("mvc: strides must be positive");
  }
  return {stride.begin(), stride.end()};
}

}  // namespace

// ---------------------------------------------------------------------------
// ManifoldImage

ManifoldImage ManifoldImage::filled(const ManifoldPoint& value, std::vector<int> dims, int channels) {
  ManifoldImage img{value.manifold, std::move(dims), channels, {}};
  img.data.assign(static_cast<std::size_t>(img.sites()) * channels, value.coords);
  return img;
}

int ManifoldImage::sites() const { return product(dims); }

ManifoldPoint ManifoldImage::point(int site, int channel) const {
  return {manifold, coords(site, channel)};
}

void ManifoldImage::set(int site, int channel, const ManifoldPoint& p) {
  if (!(p.manifold == manifold)) throw ContractError("ManifoldImage::set: manifold mismatch");
  coords(site, channel) = p.coords;
}

void validate(const ManifoldImage& image) {
  validate(image.manifold);
  if (image.dims.empty() || image.dims.size() > 3) {
    throw ValidationError("ManifoldImage: grid rank must be 1, 2 or 3");
  }
  for (int d : image.dims) {
    if (d < 1) throw ValidationError("ManifoldImage: grid sides must be >= 1");
  }
  if (image.channels < 1) throw ValidationError("ManifoldImage: channels must be >= 1");
  if (image.data.size() != static_cast<std::size_t>(image.sites()) * image.channels) {
    throw ValidationError("ManifoldImage: data size does not match dims x channels");
  }
  for (const Vector& c : image.data) validate(ManifoldPoint{image.manifold, c});
}

// ---------------------------------------------------------------------------
// Kernel geometry

int MvcKernel::window_size() const { return product(window); }

void validate(const MvcKernel& kernel) {
  if (kernel.window.empty() || kernel.window.size() > 3) {
    throw ValidationError("MvcKernel: window rank must be 1, 2 or 3");
  }
  for (int w : kernel.window) {
    if (w < 1 || w % 2 == 0) throw ValidationError("MvcKernel: window sides must be odd");
  }
  if (kernel.in_channels < 1 || kernel.out_channels < 1) {
    throw ValidationError("MvcKernel: channel counts must be >= 1");
  }
  const auto expected =
      static_cast<Eigen::Index>(kernel.in_channels) * kernel.out_channels * kernel.window_size();
  if (kernel.weights.size() != expected) {
    throw ValidationError("MvcKernel: expected " + std::to_string(expected) + " weights, got " +
                          std::to_string(kernel.weights.size()));
  }
  if (!kernel.weights.allFinite()) throw ValidationError("MvcKernel: non-finite weights");
  if (kernel.anchor.kind == AnchorKind::FixedPoint && !kernel.anchor.point) {
    throw ValidationError("MvcKernel: FixedPoint anchor without a point");
  }
}

std::vector<int> mvc_output_dims(std::span<const int> dims, std::span<const int> window,
                                 std::span<const int> stride, Padding padding) {
  if (window.size() != dims.size()) throw ValidationError("mvc: window rank does not match the image");
  const auto s = resolve_stride(stride, dims.size());
  std::vector<int> out(dims.size());
  for (std::size_t k = 0; k < dims.size(); ++k) {
    const int padded = padding == Padding::Periodic ? dims[k] + window[k] - 1 : dims[k];
    if (window[k] > padded) {
      std::ostringstream os;
      os << "mvc: window side " << window[k] << " exceeds image side " << dims[k] << " on axis " << k;
      throw ValidationError(os.str());
    }
    out[k] = (padded - window[k]) / s[k] + 1;
  }
  return out;
}

std::vector<std::vector<int>> mvc_window_sites(std::span<const int> dims,
                                               std::span<const int> window,
                                               std::span<const int> stride, Padding padding) {
  const auto out_dims = mvc_output_dims(dims, window, stride, padding);
  const auto s = resolve_stride(stride, dims.size());
  const int n_out = product(out_dims);
  const int n_win = product(window);
  std::vector<std::vector<int>> sites(n_out, std::vector<int>(n_win));
  std::vector<int> at(dims.size());
  for (int y = 0; y < n_out; ++y) {
    const auto yc = unravel(y, out_dims);
    for (int z = 0; z < n_win; ++z) {
      const auto zc = unravel(z, window);
      for (std::size_t k = 0; k < dims.size(); ++k) {
        int i = yc[k] * s[k] + zc[k];
        if (padding == Padding::Periodic) {
          i -= (window[k] - 1) / 2;
          i = ((i % dims[k]) + dims[k]) % dims[k];
        }
        at[k] = i;
      }
      sites[y][z] = ravel(at, dims);
    }
  }
  return sites;
}

// ---------------------------------------------------------------------------
// MVC

ManifoldPoint tangent_combination(const ManifoldPoint& anchor, std::span<const ManifoldPoint> points,
                                  std::span<const double> weights) {
  if (points.size() != weights.size()) {
    throw ValidationError("tangent_combination: weight count does not match point count");
  }
  NormalChart chart(anchor);
  Vector v = Vector::Zero(anchor.coords.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(points[i].manifold == anchor.manifold)) {
      throw ContractError("tangent_combination: manifold mismatch");
    }
    v += weights[i] * chart.log(points[i].coords);
  }
  return {anchor.manifold, chart.exp(v)};
}

ManifoldImage mvc_forward(const ManifoldImage& image, const MvcKernel& kernel,
                          std::span<const int> stride, Padding padding) {
  validate(kernel);
  if (kernel.in_channels != image.channels) {
    throw ValidationError("mvc_forward: kernel expects " + std::to_string(kernel.in_channels) +
                          " input channels, image has " + std::to_string(image.channels));
  }
  const auto out_dims = mvc_output_dims(image.dims, kernel.window, stride, padding);
  const auto windows = mvc_window_sites(image.dims, kernel.window, stride, padding);
  const int n_win = kernel.window_size();
  const int center = n_win / 2;

  std::optional<ManifoldPoint> shared_anchor;
  if (kernel.anchor.kind == AnchorKind::GlobalFM) {
    std::vector<ManifoldPoint> all;
    all.reserve(image.data.size());
    for (const Vector& c : image.data) all.push_back({image.manifold, c});
    shared_anchor = frechet_mean(all);
  } else if (kernel.anchor.kind == AnchorKind::FixedPoint) {
    if (!(kernel.anchor.point->manifold == image.manifold)) {
      throw ValidationError("mvc_forward: fixed anchor lives on a different manifold");
    }
    shared_anchor = kernel.anchor.point;
  }

  ManifoldImage out{image.manifold, out_dims, kernel.out_channels, {}};
  out.data.resize(static_cast<std::size_t>(out.sites()) * out.channels);

  parallel_for(windows.size(), [&](std::size_t y) {
    try {
      std::vector<ManifoldPoint> gathered;
      gathered.reserve(static_cast<std::size_t>(n_win) * image.channels);
      for (int c = 0; c < image.channels; ++c) {
        for (int z = 0; z < n_win; ++z) gathered.push_back(image.point(windows[y][z], c));
      }
      ManifoldPoint anchor;
      switch (kernel.anchor.kind) {
        case AnchorKind::WindowFM: anchor = frechet_mean(gathered); break;
        case AnchorKind::CenterPixel: anchor = gathered[center]; break;
        default: anchor = *shared_anchor; break;
      }
      NormalChart chart(anchor);
      std::vector<Vector> logs;
      logs.reserve(gathered.size());
      for (const ManifoldPoint& p : gathered) logs.push_back(chart.log(p.coords));
      for (int o = 0; o < kernel.out_channels; ++o) {
        Vector v = Vector::Zero(anchor.coords.size());
        for (int c = 0; c < image.channels; ++c) {
          for (int z = 0; z < n_win; ++z) {
            v += kernel.weights(kernel.weight_index(o, c, z)) * logs[c * n_win + z];
          }
        }
        out.coords(static_cast<int>(y), o) = chart.exp(v);
      }
    } catch (const ChartError& e) {
      throw ChartError(std::string(e.what()) + " at output site " +
                       describe_site(static_cast<int>(y), out_dims));
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// tReLU

Matrix sphere_tangent_basis(const Vector& base) {
  const Eigen::Index dim = base.size();
  Vector e1 = Vector::Zero(dim);
  e1(0) = 1.0;
  const double c = std::clamp(base(0), -1.0, 1.0);
  Vector perp = base - c * e1;
  const double pn = perp.norm();
  Matrix r = Matrix::Identity(dim, dim);
  if (pn > 1e-12) {
    perp /= pn;
    const double theta = std::atan2(pn, c);
    r += std::sin(theta) * (perp * e1.transpose() - e1 * perp.transpose()) +
         (std::cos(theta) - 1.0) * (e1 * e1.transpose() + perp * perp.transpose());
  } else if (c < 0) {
    // Base is the south pole: rotate by pi in the (e1, e2) plane.
    r(0, 0) = -1.0;
    r(1, 1) = -1.0;
  }
  return r.rightCols(dim - 1);
}

ManifoldImage trelu(const ManifoldImage& image, TreluBase base, double threshold) {
  validate(image);
  ManifoldPoint b = canonical_point(image.manifold);
  if (base == TreluBase::ImageFM) {
    std::vector<ManifoldPoint> all;
    all.reserve(image.data.size());
    for (const Vector& c : image.data) all.push_back({image.manifold, c});
    b = frechet_mean(all);
  }
  const NormalChart chart(b);
  Matrix basis;
  if (image.manifold.kind == ManifoldKind::Sphere) basis = sphere_tangent_basis(b.coords);

  ManifoldImage out = image;
  parallel_for(image.data.size(), [&](std::size_t i) {
    const Vector v = chart.log(image.data[i]);
    Vector clipped;
    if (image.manifold.kind == ManifoldKind::Spd) {
      clipped = v.cwiseMax(threshold);
    } else {
      const Vector coords = (basis.transpose() * v).cwiseMax(threshold);
      clipped = basis * coords;
    }
    out.data[i] = chart.exp(clipped);
  });
  return out;
}

// ---------------------------------------------------------------------------
// MVFC

Vector mvfc(std::span<const ManifoldPoint> points) {
  if (points.empty()) throw ValidationError("mvfc: empty point set");
  const ManifoldPoint mean = frechet_mean(points);
  Vector out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out(i) = dist(points[i], mean);
  return out;
}

// ---------------------------------------------------------------------------
// Covariance descriptor

ManifoldPoint covariance_block(const FeatureMap& features, double ridge) {
  const int c = features.channels;
  const int samples = features.height * features.width;
  if (c < 1 || features.height < 1 || features.width < 1) {
    throw ValidationError("covariance_block: feature map must have positive shape");
  }
  if (samples < 2) throw ValidationError("covariance_block: need at least two spatial samples");
  if (features.data.size() != static_cast<std::size_t>(c) * samples) {
    throw ValidationError("covariance_block: data size does not match C x H x W");
  }
  if (!(ridge > 0.0)) throw ValidationError("covariance_block: ridge must be positive");
  for (double v : features.data) {
    if (!std::isfinite(v)) throw ValidationError("covariance_block: non-finite feature value");
  }
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> f(
      features.data.data(), c, samples);
  const Vector mu = f.rowwise().mean();
  const Matrix centered = f.colwise() - mu;
  const Matrix sigma = centered * centered.transpose() / static_cast<double>(samples);

  Matrix m(c + 1, c + 1);
  m.topLeftCorner(c, c) = symmetrize(sigma) + ridge * Matrix::Identity(c, c);
  m.topRightCorner(c, 1) = mu;
  m.bottomLeftCorner(1, c) = mu.transpose();
  m(c, c) = 1.0;
  const double smallest = sym_eig(m).values(0);
  if (smallest < ridge) m.diagonal().array() += ridge - smallest;
  return ManifoldPoint::from_matrix(m);
}

// ---------------------------------------------------------------------------
// Collapsibility

std::vector<double> collapse_two_layers(std::span<const double> w, std::array<double, 2> h,
                                        const AnchorPolicy& first, const AnchorPolicy& second) {
  if (first.kind != AnchorKind::FixedPoint || second.kind != AnchorKind::FixedPoint ||
      !first.point || !second.point) {
    throw ContractError("collapse_two_layers: both layers need a FixedPoint anchor");
  }
  if (!(first.point->manifold == second.point->manifold) ||
      first.point->coords != second.point->coords) {
    throw ContractError("collapse_two_layers: the layers use different anchors");
  }
  if (w.empty() || w.size() % 2 != 0) {
    throw ValidationError("collapse_two_layers: expected 2N first-layer weights");
  }
  const std::size_t n = w.size() / 2;
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = (i < n ? h[0] : h[1]) * w[i];
  return out;
}

// ---------------------------------------------------------------------------
// Utilities

ManifoldImage apply_isometry(const IsometryAction& phi, const ManifoldImage& image) {
  ManifoldImage out = image;
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    out.data[i] = apply_isometry(phi, ManifoldPoint{image.manifold, image.data[i]}).coords;
  }
  return out;
}

ManifoldImage cyclic_shift(const ManifoldImage& image, std::span<const int> shift) {
  if (shift.size() != image.dims.size()) throw ValidationError("cyclic_shift: rank mismatch");
  ManifoldImage out = image;
  std::vector<int> src(image.dims.size());
  for (int site = 0; site < image.sites(); ++site) {
    const auto at = unravel(site, image.dims);
    for (std::size_t k = 0; k < at.size(); ++k) {
      const int d = image.dims[k];
      src[k] = (((at[k] - shift[k]) % d) + d) % d;
    }
    const int from = ravel(src, image.dims);
    for (int c = 0; c < image.channels; ++c) out.coords(site, c) = image.coords(from, c);
  }
  return out;
}

double max_pixel_distance(const ManifoldImage& a, const ManifoldImage& b) {
  if (!(a.manifold == b.manifold) || a.dims != b.dims || a.channels != b.channels) {
    throw ValidationError("max_pixel_distance: images differ in shape");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    worst = std::max(worst, dist({a.manifold, a.data[i]}, {b.manifold, b.data[i]}));
  }
  return worst;
}

}  // namespace mvcnet
