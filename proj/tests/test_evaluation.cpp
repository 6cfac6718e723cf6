#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <mutex>

#include "credexp/evaluation.hpp"

using namespace credexp;

namespace {

std::vector<SuiteCase> small_suite(std::size_t per_model = 10) {
  SuiteOptions so;
  so.per_model = per_model;
  return synthetic_suite(so);
}

struct ConstantBox final : BlackBoxModel {
  std::size_t input_dim() const override { return 3; }
  std::string describe() const override { return "constant"; }
  double predict(std::span<const double>) const override { return 0.7; }
};

}  // namespace

TEST(Harness, ParallelForVisitsEveryIndexOnce) {
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), [&](std::size_t i) { ++hits[i]; }, 4);
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(Harness, ParallelForRethrows) {
  EXPECT_THROW(parallel_for(50, [](std::size_t i) { if (i == 17) throw InvalidState("boom"); }, 3), InvalidState);
}

TEST(Harness, Median) {
  EXPECT_DOUBLE_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_DOUBLE_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_THROW(median({}), InvalidArgument);
}

TEST(Suite, ShapeAndDeterminism) {
  const auto a = small_suite(3), b = small_suite(3);
  ASSERT_EQ(a.size(), 15u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, b[i].id);
    EXPECT_EQ(a[i].ctx.x_original(), b[i].ctx.x_original());
    EXPECT_EQ(a[i].model->evaluate(a[i].ctx.x_original()), b[i].model->evaluate(b[i].ctx.x_original()));
    EXPECT_EQ(a[i].model->input_dim(), a[i].ctx.original_dim());
  }
  EXPECT_EQ(a[0].ctx.dim(), 5u);
  EXPECT_EQ(a[3].ctx.dim(), 10u);
  EXPECT_EQ(a[12].ctx.dim(), 2u);
  SuiteOptions bad;
  bad.families = {"imagenet"};
  EXPECT_THROW(synthetic_suite(bad), InvalidArgument);
}

TEST(Suite, HeteroscedasticCase) {
  const auto c = heteroscedastic_case(4);
  EXPECT_EQ(c.ctx.dim(), 10u);
  EXPECT_EQ(c.ctx.x_original(), std::vector<double>(10, 1.0));
  EXPECT_EQ(c.id, heteroscedastic_case(4).id);
}

TEST(Coverage, SelfReferenceCoversEverything) {
  CoverageOptions co;
  co.n_fit = co.n_gt = 100;
  const auto rep = coverage_calibration(small_suite(4), ProximityKernel::exponential(), co);
  EXPECT_EQ(rep.coverage, 1.0);
  EXPECT_EQ(rep.pairs, 4u * (5 + 10 + 5 + 2 + 2));
}

TEST(Coverage, HalfLevelCalibrated) {
  CoverageOptions co;
  co.alpha = 0.5;
  const auto rep = coverage_calibration(small_suite(), ProximityKernel::exponential(), co);
  EXPECT_GE(rep.pairs, 200u);
  EXPECT_NEAR(rep.coverage, 0.5, 0.08);
}

TEST(Coverage, PerDatasetRowsAddUp) {
  CoverageOptions co;
  co.n_gt = 1000;
  const auto rep = coverage_calibration(small_suite(4), ProximityKernel::exponential(), co);
  std::size_t pairs = 0, hits = 0;
  for (const auto& r : rep.per_dataset) {
    pairs += r.pairs;
    hits += r.hits;
  }
  EXPECT_EQ(pairs, rep.pairs);
  EXPECT_EQ(hits, rep.hits);
  EXPECT_EQ(rep.per_dataset.size(), 5u);
  EXPECT_NEAR(rep.se, std::sqrt(rep.coverage * (1 - rep.coverage) / static_cast<double>(rep.pairs)), 1e-15);
}

TEST(Coverage, CacheIsReusedAndThreadCountIrrelevant) {
  const auto cases = small_suite(3);
  CoverageOptions co;
  co.n_gt = 1000;
  co.threads = 1;
  GroundTruthCache cache;
  const auto a = coverage_calibration(cases, ProximityKernel::exponential(), co, &cache);
  EXPECT_EQ(cache.size(), cases.size());
  co.threads = 4;
  co.prior = {100.0, 1e-5};
  const auto b = coverage_calibration(cases, ProximityKernel::exponential(), co, &cache);
  EXPECT_EQ(cache.size(), cases.size());
  EXPECT_EQ(cache.hits(), cases.size());
  co.prior = {};
  const auto c = coverage_calibration(cases, ProximityKernel::exponential(), co, &cache);
  EXPECT_EQ(a.hits, c.hits);
  EXPECT_LE(b.hits, a.hits);
}

TEST(Coverage, RejectsSmallReference) {
  CoverageOptions co;
  co.n_gt = 500;
  EXPECT_THROW(coverage_calibration(small_suite(1), ProximityKernel::exponential(), co), InvalidArgument);
}

TEST(PtgCalibration, TargetsOrderedSensibly) {
  SuiteOptions so;
  so.per_model = 3;
  so.noise_sd = 3.0;
  so.families = {"linear_logit", "toy_nonlinear"};
  PtgCalibrationOptions po;
  po.seeds = {0, 1};
  const auto rep = ptg_calibration(synthetic_suite(so), ProximityKernel::exponential(), po);
  ASSERT_EQ(rep.targets.size(), 4u);
  EXPECT_EQ(rep.runs.size(), 6u * 2u * 4u);
  for (std::size_t t = 1; t < rep.targets.size(); ++t) EXPECT_LE(rep.targets[t].median_G, rep.targets[t - 1].median_G);
  EXPECT_LT(rep.targets.front().median_observed, rep.targets.back().median_observed);
  for (const auto& r : rep.runs) EXPECT_NEAR(r.ratio, r.observed / r.W, 1e-15);
}

TEST(PtgCalibration, ObservedWidthConvention) {
  PosteriorExplanation post;
  post.phi_hat = Eigen::Vector3d(0, 0, 0);
  post.intervals = {{-1, 1}, {-0.5, 0.5}, {-2, 2}};
  EXPECT_DOUBLE_EQ(observed_width(post, WidthConvention::Full), 2.0);
  EXPECT_DOUBLE_EQ(observed_width(post, WidthConvention::Half), 1.0);
}

TEST(Race, PairsEveryStrategy) {
  SamplingConfig cfg;
  cfg.stop_width = 0.1;
  const auto out = sampling_race([](std::uint64_t s) { return heteroscedastic_case(s); }, ProximityKernel::exponential(), cfg, {0, 1, 2});
  ASSERT_EQ(out.size(), 6u);
  for (std::size_t k = 0; k < out.size(); ++k) {
    EXPECT_EQ(out[k].strategy, k % 2 ? Strategy::Focused : Strategy::Random);
    EXPECT_LE(out[k].queries, cfg.budget);
    if (out[k].reached) EXPECT_LE(out[k].final_width, 0.1);
  }
  cfg.stop_width.reset();
  EXPECT_THROW(sampling_race([](std::uint64_t s) { return heteroscedastic_case(s); }, ProximityKernel::exponential(), cfg, {0}), InvalidArgument);
}

TEST(Stability, SelfComparisonIsZero) {
  auto model = std::shared_ptr<const BlackBoxModel>(std::make_shared<LinearLogit>(std::vector<double>{1, -1, 2}, 0.0));
  const auto e = plain_wls_explainer(model, ProximityKernel::exponential(), 200);
  std::vector<InstanceContext> inst;
  for (int i = 0; i < 4; ++i) inst.push_back(InstanceContext::tabular({0.1 * i, 1.0, -0.5 * i}, {0, 0, 0}));
  const auto rep = lipschitz_stability(e, e, inst, {});
  for (std::size_t i = 0; i < inst.size(); ++i) {
    EXPECT_EQ(rep.lipschitz_a[i], rep.lipschitz_b[i]);
    EXPECT_GE(rep.lipschitz_a[i], 0.0);
    EXPECT_EQ(rep.improvement_pct[i], 0.0);
  }
}

TEST(Stability, ConstantBoxIsFlat) {
  auto model = std::shared_ptr<const BlackBoxModel>(std::make_shared<ConstantBox>());
  SamplingConfig cfg;
  cfg.budget = 100;
  const auto a = bayes_explainer(model, ProximityKernel::shapley(), cfg);
  const auto b = plain_wls_explainer(model, ProximityKernel::shapley(), 100);
  std::vector<InstanceContext> inst = {InstanceContext::tabular({1, 2, 3}, {0, 0, 0}),
                                       InstanceContext::tabular({-1, 0, 3}, {0, 0, 0})};
  const auto rep = lipschitz_stability(a, b, inst, {});
  for (std::size_t i = 0; i < inst.size(); ++i) {
    EXPECT_LT(rep.lipschitz_a[i], 1e-9);
    EXPECT_LT(rep.lipschitz_b[i], 1e-9);
  }
}

TEST(Stability, RandomBayesMeanEqualsRidge) {
  // Same perturbations and seed: the posterior mean is the ridge solution.
  auto model = std::shared_ptr<const BlackBoxModel>(
      std::make_shared<LinearLogit>(std::vector<double>{1, -1, 2}, 0.0, HashedNoise{1.0, {}, 3}));
  SamplingConfig cfg;
  cfg.S = 150;
  cfg.budget = 150;
  const auto bayes = bayes_explainer(model, ProximityKernel::exponential(), cfg);
  const auto wls = plain_wls_explainer(model, ProximityKernel::exponential(), 150);
  const auto ctx = InstanceContext::tabular({0.3, 1.0, -0.5}, {0, 0, 0});
  EXPECT_LT((bayes(ctx, 11) - wls(ctx, 11)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Stability, NeighboursStayInBall) {
  std::vector<std::vector<double>> seen;
  std::mutex mu;
  const Explainer probe = [&](const InstanceContext& ctx, std::uint64_t) {
    std::lock_guard lock(mu);
    seen.push_back(ctx.x_original());
    return Eigen::VectorXd(Eigen::VectorXd::Zero(2));
  };
  StabilityOptions opt;
  opt.lower = {0.0, -10.0};
  opt.upper = {1.0, 10.0};
  opt.epsilon = 0.05;
  opt.n_neighbors = 50;
  lipschitz_stability(probe, probe, {InstanceContext::tabular({0.5, 0.0}, {0, 0})}, opt);
  for (const auto& x : seen) {
    EXPECT_LE(std::abs(x[0] - 0.5), 0.05 + 1e-12);
    EXPECT_LE(std::abs(x[1]), 1.0 + 1e-12);
  }
}

TEST(PriorGrid, ReproducesPaperPattern) {
  // Grid values printed for the same axes: row n0=1e-5 sits at 95.7-96.6, the
  // cell (100, 1e-5) at 72.2 and the wide-prior corner at 100.
  const auto cases = small_suite(40);
  CoverageOptions co;
  GroundTruthCache cache;
  const auto base = coverage_calibration(cases, ProximityKernel::exponential(), co, &cache).coverage;
  const auto grid = prior_sensitivity_grid({1e-5, 100.0}, {1e-5, 100.0}, cases, ProximityKernel::exponential(), co,
                                           &cache);
  ASSERT_EQ(grid.size(), 4u);
  EXPECT_NEAR(grid[0].report.coverage, 0.957, 0.02);  // (1e-5, 1e-5)
  EXPECT_NEAR(grid[1].report.coverage, 0.966, 0.03);  // (1e-5, 100)
  EXPECT_LE(grid[2].report.coverage, base - 0.10);    // (100, 1e-5)
  EXPECT_GE(grid[3].report.coverage, 0.99);           // (100, 100)
  EXPECT_EQ(cache.size(), cases.size());
}

TEST(Stability, FocusedBayesSteadierThanWlsOnSuite) {
  // One suite model, the 40 suite instances of its family, equal query budgets.
  SuiteOptions so;
  so.families = {"linear_logit"};
  const auto cases = synthetic_suite(so);
  std::vector<InstanceContext> inst;
  for (const auto& c : cases) inst.push_back(c.ctx);
  SamplingConfig cfg;
  cfg.strategy = Strategy::Focused;
  const auto k = ProximityKernel::exponential();
  const auto rep = lipschitz_stability(bayes_explainer(cases[0].model, k, cfg),
                                       plain_wls_explainer(cases[0].model, k, cfg.budget), inst, {});
  EXPECT_EQ(rep.improvement_pct.size(), 40u);
  EXPECT_GT(rep.median_improvement_pct, 0.0);
  RecordProperty("median_improvement_pct", std::to_string(rep.median_improvement_pct));
}
