#include <gtest/gtest.h>

#include <cmath>

#include "credexp/ptg.hpp"
#include "oracles.hpp"

using namespace credexp;

namespace {

double oracle_raw(const PtgInputs& in) {
  const double q = oracle::normal_quantile(0.5 * (1.0 + in.alpha));
  const double m = in.convention == WidthConvention::Full ? 2.0 * q : q;
  return 4.0 * in.s_sq_S / (in.pi_bar_S * std::pow(in.W / m, 2)) - static_cast<double>(in.S);
}

}  // namespace

TEST(Ptg, HandValueHalfWidth) {
  // 4 * 0.3 / (0.1 / 1.959964)^2 - 46 = 414.975
  const PtgInputs in{0.3, 1.0, 46, 0.1, 0.95, WidthConvention::Half};
  const auto est = estimate_ptg(in);
  EXPECT_NEAR(est.raw, 414.975, 1e-3);
  EXPECT_EQ(est.G, 415u);
  EXPECT_EQ(est.total, 461u);
  EXPECT_FALSE(est.capped);
}

TEST(Ptg, HandValueFullWidth) {
  // 4 * 0.02 / (0.8 * (0.1 / 3.919928)^2) - 50 = 103.658
  const PtgInputs in{0.02, 0.8, 50, 0.1, 0.95, WidthConvention::Full};
  EXPECT_EQ(estimate_ptg(in).G, 104u);
}

TEST(Ptg, AgreesWithOracle) {
  for (double s2 : {1e-4, 0.01, 0.2})
    for (double pi : {0.3, 1.0, 4.0})
      for (double W : {0.05, 0.1, 0.4})
        for (auto conv : {WidthConvention::Full, WidthConvention::Half}) {
          const PtgInputs in{s2, pi, 30, W, 0.9, conv};
          const auto est = estimate_ptg(in);
          const double raw = oracle_raw(in);
          EXPECT_NEAR(est.raw, raw, 1e-9 * std::max(1.0, std::abs(raw)));
          EXPECT_EQ(est.G, raw > 0 ? static_cast<std::size_t>(std::ceil(raw)) : 0u);
        }
}

TEST(Ptg, AlreadyNarrowEnough) {
  const auto est = estimate_ptg({1e-6, 1.0, 200, 0.4, 0.95, WidthConvention::Full});
  EXPECT_LT(est.raw, 0.0);
  EXPECT_EQ(est.G, 0u);
  EXPECT_EQ(est.total, 200u);
}

TEST(Ptg, TotalScalesWithInverseSquareWidth) {
  const PtgInputs a{0.05, 1.0, 10, 0.1, 0.95, WidthConvention::Full};
  PtgInputs b = a;
  b.W = 0.05;
  const double ta = estimate_ptg(a).raw + 10.0, tb = estimate_ptg(b).raw + 10.0;
  EXPECT_NEAR(tb / ta, 4.0, 1e-12);
}

TEST(Ptg, FullConventionNeedsFourTimesHalf) {
  PtgInputs a{0.05, 1.0, 10, 0.1, 0.95, WidthConvention::Full};
  PtgInputs b = a;
  b.convention = WidthConvention::Half;
  EXPECT_NEAR((estimate_ptg(a).raw + 10.0) / (estimate_ptg(b).raw + 10.0), 4.0, 1e-12);
}

TEST(Ptg, MonotoneInAlphaAndNoise) {
  std::size_t prev = 0;
  for (double alpha : {0.5, 0.8, 0.9, 0.95, 0.99}) {
    const auto G = estimate_ptg({0.05, 1.0, 10, 0.1, alpha, WidthConvention::Full}).G;
    EXPECT_GE(G, prev);
    prev = G;
  }
  prev = 0;
  for (double s2 : {0.001, 0.01, 0.1, 1.0}) {
    const auto G = estimate_ptg({s2, 1.0, 10, 0.1, 0.95, WidthConvention::Full}).G;
    EXPECT_GE(G, prev);
    prev = G;
  }
}

TEST(Ptg, CapIsReported) {
  const auto est = estimate_ptg({1.0, 1e-3, 10, 1e-3, 0.99, WidthConvention::Full}, 5000);
  EXPECT_TRUE(est.capped);
  EXPECT_EQ(est.G, 5000u);
}

TEST(Ptg, RejectsBadInputs) {
  EXPECT_THROW(estimate_ptg({0.1, 1.0, 9, 0.1}), InvalidArgument);
  EXPECT_THROW(estimate_ptg({0.1, 1.0, 20, 0.0}), InvalidArgument);
  EXPECT_THROW(estimate_ptg({0.1, 0.0, 20, 0.1}), InvalidArgument);
  EXPECT_THROW(estimate_ptg({-0.1, 1.0, 20, 0.1}), InvalidArgument);
  EXPECT_THROW(estimate_ptg({0.1, 1.0, 20, 0.1, 1.0}), InvalidArgument);
}

TEST(PtgSeed, LinearModelNeedsNothingMore) {
  const SparseLinear model({0.1, -0.05, 0.08, 0.0, 0.12}, 0.4);
  const auto ctx = InstanceContext::tabular({1, 1, 1, 1, 1}, {0, 0, 0, 0, 0});
  const auto run = seed_then_estimate(ctx, model, ProximityKernel::exponential(), 200, 0.1, 0.95, 3);
  EXPECT_EQ(run.estimate.G, 0u);
  EXPECT_DOUBLE_EQ(run.inputs.s_sq_S, run.seed_fit.s_sq);
  EXPECT_EQ(run.seed_fit.N, 200u);
}

TEST(PtgSeed, Deterministic) {
  const LinearLogit model({1.0, -2.0, 0.5}, 0.0, HashedNoise{2.0, {}, 5});
  const auto ctx = InstanceContext::tabular({1, 1, 1}, {0, 0, 0});
  const auto a = seed_then_estimate(ctx, model, ProximityKernel::exponential(), 50, 0.1, 0.95, 9);
  const auto b = seed_then_estimate(ctx, model, ProximityKernel::exponential(), 50, 0.1, 0.95, 9);
  EXPECT_EQ(a.estimate.G, b.estimate.G);
  EXPECT_GT(a.estimate.G, 0u);
  EXPECT_EQ(a.estimate.total, 50u + a.estimate.G);
  EXPECT_THROW(seed_then_estimate(ctx, model, ProximityKernel::exponential(), 5, 0.1, 0.95, 9), InvalidArgument);
}
