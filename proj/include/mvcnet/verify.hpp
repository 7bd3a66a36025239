#pragma once

// Executable property suites: geometry axioms, equivariance, layer collapse,
// non-contraction and reverse-mode gradient checks. Each property reports
// its trial count, worst residual and, on failure, a reproducible witness.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvcnet/manifold.hpp"

namespace mvcnet {

struct PropertyResult {
  std::string name;
  std::string manifold;
  std::size_t trials = 0;
  std::size_t failures = 0;
  /// Worst observed value of the checked quantity (error, or ratio for
  /// lower-bound properties).
  double worst = 0.0;
  double tolerance = 0.0;
  bool passed = true;
  std::string witness;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

struct VerifyOptions {
  ManifoldId manifold = ManifoldId::spd(3);
  std::uint64_t seed = 1;
  /// Trials per randomized property (100 matches the equivariance criteria).
  int trials = 100;
  /// Random triples for the metric axioms.
  int metric_triples = 10000;
  /// Draws for the collapse property and its negative control.
  int collapse_draws = 200;
  /// Checked coordinates per layer type in the gradient checks.
  int grad_coordinates = 50;
  /// Skews the isometry used on one side of the equivariance checks.
  bool inject_fault = false;
};

struct VerifyReport {
  std::vector<PropertyResult> results;

  bool passed() const;
  void append(const VerifyReport& other);
  nlohmann::json to_json() const;
  std::string summary() const;
};

/// Exp/Log round trips, metric axioms, Frechet mean optimality and
/// isometry invariance.
VerifyReport verify_geometry(const VerifyOptions& options);
/// Range and domain equivariance of MVC, two-layer collapse with its
/// negative control, non-contraction witness, tReLU idempotence, MVFC
/// invariance and softmax normalisation.
VerifyReport verify_layers(const VerifyOptions& options);
/// Reverse-mode gradients against central differences (eps 1e-6) with the
/// anchors of every normal chart frozen at their recorded values.
VerifyReport verify_gradients(const VerifyOptions& options);
VerifyReport verify_all(const VerifyOptions& options);

/// Relative error used by the gradient checks: |a - b| / max(|a|, |b|, floor).
double gradient_relative_error(double analytic, double numeric);
inline constexpr double kGradCheckEps = 1e-6;
inline constexpr double kGradCheckTol = 1e-5;

}  // namespace mvcnet
