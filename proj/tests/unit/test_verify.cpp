#include <gtest/gtest.h>

#include <string>

#include "mvcnet/verify.hpp"

using namespace mvcnet;

namespace {

VerifyOptions quick(const ManifoldId& m) {
  VerifyOptions o;
  o.manifold = m;
  o.trials = 10;
  o.metric_triples = 500;
  o.collapse_draws = 20;
  o.grad_coordinates = 10;
  return o;
}

const PropertyResult* find(const VerifyReport& r, const std::string& prefix) {
  for (const auto& p : r.results)
    if (p.name.rfind(prefix, 0) == 0) return &p;
  return nullptr;
}

}  // namespace

TEST(GradientRelativeError, UsesFloorForTinyValues) {
  EXPECT_DOUBLE_EQ(gradient_relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(gradient_relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(gradient_relative_error(1e-9, 0.0), 1e-9 / 1e-4);
}

TEST(Verify, AllPropertiesPassOnBothManifolds) {
  for (const ManifoldId& m : {ManifoldId::spd(3), ManifoldId::sphere(2)}) {
    const VerifyReport r = verify_all(quick(m));
    EXPECT_TRUE(r.passed()) << r.summary();
    for (const auto& p : r.results) EXPECT_GT(p.trials, 0u) << p.name;
  }
}

TEST(Verify, SeedChangesInputsButNotVerdict) {
  VerifyOptions o = quick(ManifoldId::spd(2));
  o.seed = 12345;
  EXPECT_TRUE(verify_geometry(o).passed());
  EXPECT_TRUE(verify_layers(o).passed());
}

TEST(Verify, InjectedFaultBreaksEquivarianceAndNamesWitness) {
  for (const ManifoldId& m : {ManifoldId::spd(3), ManifoldId::sphere(2)}) {
    VerifyOptions o = quick(m);
    o.inject_fault = true;
    const VerifyReport r = verify_layers(o);
    EXPECT_FALSE(r.passed());
    const PropertyResult* eq = find(r, "mvc_range_equivariance");
    ASSERT_NE(eq, nullptr);
    EXPECT_FALSE(eq->passed);
    EXPECT_NE(eq->witness.find("seed"), std::string::npos) << eq->witness;
    const PropertyResult* shift = find(r, "mvc_cyclic_shift_equivariance");
    ASSERT_NE(shift, nullptr);
    EXPECT_TRUE(shift->passed);
  }
}

TEST(Verify, NonContractionWitnessExceedsTenfold) {
  const VerifyReport r = verify_layers(quick(ManifoldId::spd(3)));
  const PropertyResult* w = find(r, "mvc_non_contraction_witness");
  ASSERT_NE(w, nullptr);
  EXPECT_TRUE(w->passed);
  EXPECT_GT(w->worst, 10.0);
}

TEST(Verify, ReportSerialises) {
  const VerifyReport r = verify_gradients(quick(ManifoldId::sphere(2)));
  const auto j = r.to_json();
  EXPECT_EQ(j.at("passed").get<bool>(), r.passed());
  EXPECT_EQ(j.at("properties").size(), r.results.size());
}
