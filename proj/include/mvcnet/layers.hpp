#pragma once

// Manifold-valued image layers: manifold-valued convolution (MVC), tangent
// ReLU, the distance-to-mean fully connected front end (MVFC) and the
// covariance descriptor used to turn feature maps into SPD points.

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "mvcnet/manifold.hpp"

namespace mvcnet {

/// n-D grid (n = 1, 2, 3) of manifold points with a channel dimension.
/// Storage is site-major: index = site * channels + channel, with sites
/// enumerated row-major over dims (last axis fastest).
struct ManifoldImage {
  ManifoldId manifold;
  std::vector<int> dims;
  int channels = 1;
  std::vector<Vector> data;

  static ManifoldImage filled(const ManifoldPoint& value, std::vector<int> dims, int channels);

  int sites() const;
  ManifoldPoint point(int site, int channel) const;
  void set(int site, int channel, const ManifoldPoint& p);
  const Vector& coords(int site, int channel) const { return data[site * channels + channel]; }
  Vector& coords(int site, int channel) { return data[site * channels + channel]; }
};

void validate(const ManifoldImage& image);

enum class Padding { None, Periodic };

enum class AnchorKind { WindowFM, CenterPixel, GlobalFM, FixedPoint };

struct AnchorPolicy {
  AnchorKind kind = AnchorKind::WindowFM;
  std::optional<ManifoldPoint> point;  // FixedPoint only

  static AnchorPolicy fixed(const ManifoldPoint& p) { return {AnchorKind::FixedPoint, p}; }
};

/// Real weight window shared across output sites.
/// weights[(o * in_channels + c) * window_size + z], z row-major over the window.
struct MvcKernel {
  std::vector<int> window;
  int in_channels = 1;
  int out_channels = 1;
  Vector weights;
  AnchorPolicy anchor;

  int window_size() const;
  int weight_index(int out, int in, int offset) const {
    return (out * in_channels + in) * window_size() + offset;
  }
};

void validate(const MvcKernel& kernel);

/// Output grid shape of a convolution over `dims`.
std::vector<int> mvc_output_dims(std::span<const int> dims, std::span<const int> window,
                                 std::span<const int> stride, Padding padding);

/// Input sites covered by the window of each output site, in window order.
/// Result is indexed [output_site][offset].
std::vector<std::vector<int>> mvc_window_sites(std::span<const int> dims,
                                               std::span<const int> window,
                                               std::span<const int> stride, Padding padding);

/// Exp_m(sum_i w_i Log_m x_i).
ManifoldPoint tangent_combination(const ManifoldPoint& anchor, std::span<const ManifoldPoint> points,
                                  std::span<const double> weights);

/// Manifold-valued convolution. For each output site the window's points of
/// all input channels share one anchor; out(y, o) = Exp_m(sum_{c,z} w[o,c,z] Log_m f(y+z, c)).
/// Empty stride means stride 1 on every axis.
ManifoldImage mvc_forward(const ManifoldImage& image, const MvcKernel& kernel,
                          std::span<const int> stride = {}, Padding padding = Padding::None);

enum class TreluBase { CanonicalBase, ImageFM };

/// Orthonormal basis (columns) of the tangent plane of the sphere at `base`,
/// obtained by rotating e_2..e_{n+1} along the geodesic from e_1.
Matrix sphere_tangent_basis(const Vector& base);

/// Tangent ReLU: Log to the base, entrywise max with threshold in the base's
/// canonical coordinates, Exp back.
ManifoldImage trelu(const ManifoldImage& image, TreluBase base = TreluBase::CanonicalBase,
                    double threshold = 0.0);

/// Distances of each point to the unweighted Frechet mean of the set.
Vector mvfc(std::span<const ManifoldPoint> points);

/// C x H x W real feature tensor, index (c * H + h) * W + w.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  double at(int c, int h, int w) const { return data[(c * height + h) * width + w]; }
  double& at(int c, int h, int w) { return data[(c * height + h) * width + w]; }
};

/// [[Sigma + ridge I, mu], [mu^T, 1]] over the H*W spatial samples, shifted
/// along the diagonal when needed so the smallest eigenvalue is at least ridge.
ManifoldPoint covariance_block(const FeatureMap& features, double ridge = 1e-6);

/// Collapses two cascaded MVC layers sharing the fixed anchor p: first layer
/// filters w[0..N) and w[N..2N) produce M1, M2; the second combines them with
/// h. Returns the single-layer weights (h1 w_1..h1 w_N, h2 w_{N+1}..h2 w_2N).
std::vector<double> collapse_two_layers(std::span<const double> w, std::array<double, 2> h,
                                        const AnchorPolicy& first, const AnchorPolicy& second);

// Image utilities used by the equivariance checks.
ManifoldImage apply_isometry(const IsometryAction& phi, const ManifoldImage& image);
/// out(x) = in(x - shift) with periodic wrap.
ManifoldImage cyclic_shift(const ManifoldImage& image, std::span<const int> shift);
double max_pixel_distance(const ManifoldImage& a, const ManifoldImage& b);

}  // namespace mvcnet
