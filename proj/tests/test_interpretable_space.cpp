#include <gtest/gtest.h>

#include <cmath>

#include "credexp/interpretable_space.hpp"

using namespace credexp;

namespace {

InstanceContext ctx4() { return InstanceContext::tabular({1.5, -2.0, 3.0, 0.25}, {0.0, 0.0, 0.0, 0.0}); }

}  // namespace

TEST(Perturbations, SameSeedSameStream) {
  const auto ctx = ctx4();
  const auto a = sample_perturbations(ctx, 3, 7);
  const auto b = sample_perturbations(ctx, 3, 7);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a, b);
  for (const auto& z : a) {
    EXPECT_EQ(z.size(), 4u);
    for (auto bit : z.bits()) EXPECT_LE(bit, 1);
  }
}

TEST(Perturbations, DifferentSeedsDiffer) {
  const auto ctx = ctx4();
  EXPECT_NE(sample_perturbations(ctx, 50, 1), sample_perturbations(ctx, 50, 2));
}

TEST(Perturbations, SingleBitBalance) {
  // 4 sigma of Binomial(10000, 0.5) / 10000 is 0.02.
  const auto ctx = InstanceContext::tabular({1.0}, {0.0});
  const auto zs = sample_perturbations(ctx, 10'000, 1);
  double ones = 0;
  for (const auto& z : zs) ones += z[0];
  EXPECT_GE(ones / 10'000.0, 0.48);
  EXPECT_LE(ones / 10'000.0, 0.52);
}

TEST(Perturbations, EveryBitBalanced) {
  const std::size_t d = 70;  // spans two engine words
  const std::size_t n = 20'000;
  std::vector<double> x(d, 1.0), base(d, 0.0);
  const auto zs = sample_perturbations(InstanceContext::tabular(x, base), n, 99);
  const double tol = 4.0 * std::sqrt(0.25 / static_cast<double>(n));
  for (std::size_t j = 0; j < d; ++j) {
    double ones = 0;
    for (const auto& z : zs) ones += z[j];
    EXPECT_NEAR(ones / static_cast<double>(n), 0.5, tol) << "bit " << j;
  }
}

TEST(Perturbations, ZeroCountRejected) { EXPECT_THROW(sample_perturbations(ctx4(), 0, 1), InvalidArgument); }

TEST(Perturbations, AllOnesDrawMapsBack) {
  const auto ctx = ctx4();
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto z = sample_perturbations(ctx, 1, seed).front();
    if (coalition_size(z) == 4) {
      EXPECT_EQ(to_original_space(ctx, z), ctx.x_original());
      return;
    }
  }
  FAIL() << "no all-ones draw in 200 seeds";
}

TEST(OriginalSpace, MixedMask) {
  const auto ctx = InstanceContext::tabular({2.0, 5.0}, {0.0, 0.0});
  EXPECT_EQ(to_original_space(ctx, BinaryPerturbation::from_string("10")), (std::vector<double>{2.0, 0.0}));
}

TEST(OriginalSpace, Identities) {
  const auto ctx = InstanceContext::tabular({2.0, 5.0, -1.0}, {0.5, 0.25, 9.0});
  EXPECT_EQ(to_original_space(ctx, BinaryPerturbation::all_ones(3)), ctx.x_original());
  EXPECT_EQ(to_original_space(ctx, BinaryPerturbation::all_zeros(3)), ctx.baseline());
}

TEST(OriginalSpace, GroupedFeatureMovesTogether) {
  InstanceContext ctx({1.0, 2.0, 3.0}, {{"a", {0}}, {"bc", {1, 2}}}, {0.0, 0.0, 0.0});
  EXPECT_EQ(ctx.dim(), 2u);
  EXPECT_EQ(to_original_space(ctx, BinaryPerturbation::from_string("01")), (std::vector<double>{0.0, 2.0, 3.0}));
}

TEST(OriginalSpace, DimensionMismatch) {
  EXPECT_THROW(to_original_space(ctx4(), BinaryPerturbation::all_ones(3)), InvalidArgument);
}

TEST(Context, Invariants) {
  EXPECT_THROW(InstanceContext({1.0}, {}, {0.0}), InvalidArgument);
  EXPECT_THROW(InstanceContext({1.0, 2.0}, {{"a", {}}}, {0.0, 0.0}), InvalidArgument);
  EXPECT_THROW(InstanceContext({1.0, 2.0}, {{"a", {0}}, {"b", {0}}}, {0.0, 0.0}), InvalidArgument);
  EXPECT_THROW(InstanceContext({1.0, 2.0}, {{"a", {2}}}, {0.0, 0.0}), InvalidArgument);
  EXPECT_THROW(InstanceContext::tabular({1.0, 2.0}, {0.0}), InvalidArgument);
}

TEST(Coalition, Popcount) {
  EXPECT_EQ(coalition_size(BinaryPerturbation::from_string("1010")), 2u);
  EXPECT_EQ(coalition_size(BinaryPerturbation::all_zeros(5)), 0u);
  EXPECT_EQ(coalition_size(BinaryPerturbation::all_ones(5)), 5u);
}

TEST(Perturbation, StringRoundTrip) {
  const auto z = BinaryPerturbation::from_string("0110");
  EXPECT_EQ(z.to_string(), "0110");
  EXPECT_THROW(BinaryPerturbation::from_string("012"), InvalidArgument);
}

TEST(Perturbation, DesignRow) {
  const auto z = BinaryPerturbation::from_string("101");
  EXPECT_EQ(z.design_row(false), Eigen::Vector3d(1, 0, 1));
  EXPECT_EQ(z.design_row(true), Eigen::Vector4d(1, 1, 0, 1));
}

TEST(PerturbationSetTest, Validation) {
  const std::vector<BinaryPerturbation> rows = {BinaryPerturbation::from_string("10")};
  const std::vector<double> ok_pi = {1.0}, bad_pi = {-1.0}, ok_y = {0.5}, bad_y = {1.5};
  EXPECT_NO_THROW(PerturbationSet::from_rows(rows, ok_pi, ok_y, true));
  EXPECT_THROW(PerturbationSet::from_rows(rows, bad_pi, ok_y, true), InvalidArgument);
  EXPECT_THROW(PerturbationSet::from_rows(rows, ok_pi, bad_y, true), InvalidArgument);
  const std::vector<double> nan_pi = {std::nan("")};
  EXPECT_THROW(PerturbationSet::from_rows(rows, nan_pi, ok_y, true), InvalidArgument);
  EXPECT_THROW(PerturbationSet::from_rows({}, {}, {}, true), InvalidArgument);
}
