#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "credexp/blackbox.hpp"

using namespace credexp;

namespace {

const std::filesystem::path kData = CREDEXP_DATA_DIR;

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
  const auto dir = std::filesystem::temp_directory_path() / "credexp_blackbox_test";
  std::filesystem::create_directories(dir);
  const auto p = dir / name;
  std::ofstream(p) << text;
  return p;
}

template <class F>
ParseError parse_error_of(F&& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e;
  }
  ADD_FAILURE() << "no ParseError";
  return ParseError("", 0, "", "");
}

std::unique_ptr<TreeEnsemble> stumps(std::size_t copies) {
  nlohmann::json j;
  j["trees"] = nlohmann::json::array();
  for (std::size_t i = 0; i < copies; ++i)
    j["trees"].push_back({{"feature", 0}, {"threshold", 0.5}, {"left", {{"leaf", 0.2}}}, {"right", {{"leaf", 0.8}}}});
  return parse_tree_ensemble(j, "inline");
}

struct Faulty final : BlackBoxModel {
  double out;
  explicit Faulty(double v) : out(v) {}
  std::size_t input_dim() const override { return 2; }
  std::string describe() const override { return "faulty"; }
  double predict(std::span<const double>) const override { return out; }
};

}  // namespace

TEST(LinearLogitModel, MidpointAtZeroLogit) {
  const LinearLogit m({1.0, -3.0}, 0.0);
  EXPECT_DOUBLE_EQ(m.evaluate(std::vector<double>{0.0, 0.0}), 0.5);
  EXPECT_NEAR(m.evaluate(std::vector<double>{1.0, 0.0}), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_EQ(m.query_count(), 2u);
}

TEST(Trees, StumpRoutesOnStrictLess) {
  const auto t = stumps(1);
  EXPECT_DOUBLE_EQ(t->evaluate(std::vector<double>{1.0}), 0.8);
  EXPECT_DOUBLE_EQ(t->evaluate(std::vector<double>{0.0}), 0.2);
  EXPECT_DOUBLE_EQ(t->evaluate(std::vector<double>{0.5}), 0.8);
}

TEST(Trees, IdenticalTreesAverageToOne) {
  const auto one = stumps(1), two = stumps(2);
  for (double x : {-1.0, 0.49, 0.5, 3.0})
    EXPECT_DOUBLE_EQ(one->evaluate(std::vector<double>{x}), two->evaluate(std::vector<double>{x}));
}

TEST(Trees, ForestFileMatchesHandRouting) {
  const auto forest = load_tree_ensemble(kData / "models" / "forest.json");
  ASSERT_EQ(forest->tree_count(), 3u);
  ASSERT_EQ(forest->input_dim(), 3u);
  auto hand = [](const std::vector<double>& x) {
    const double t1 = x[0] < 0.5 ? 0.2 : (x[1] < 1.0 ? 0.6 : 0.9);
    const double t2 = x[2] < -0.5 ? 0.1 : 0.7;
    const double t3 = x[1] < 0.0 ? (x[0] < 2.0 ? 0.3 : 0.5) : 0.8;
    return (t1 + t2 + t3) / 3.0;
  };
  const std::vector<std::vector<double>> probes = {
      {0.0, 0.0, 0.0}, {1.0, 2.0, -1.0}, {3.0, -1.0, 0.0}, {0.5, 1.0, -0.5}, {-2.0, -0.1, 5.0}};
  for (const auto& x : probes) EXPECT_NEAR(forest->evaluate(x), hand(x), 1e-15);

  const auto via_spec = load_model(kData / "models" / "forest_model.json");
  for (const auto& x : probes) EXPECT_DOUBLE_EQ(via_spec->evaluate(x), forest->evaluate(x));
}

TEST(Trees, EmptyEnsembleRejected) {
  const auto e = parse_error_of([] { parse_tree_ensemble(nlohmann::json{{"trees", nlohmann::json::array()}}, "x"); });
  EXPECT_EQ(e.field(), "/trees");
  EXPECT_THROW(TreeEnsemble({}, 2), InvalidArgument);
}

TEST(Trees, FeatureBeyondInputDim) {
  const nlohmann::json j = {{"input_dim", 1},
                            {"trees", {{{"feature", 3}, {"threshold", 0}, {"left", {{"leaf", 0}}}, {"right", {{"leaf", 1}}}}}}};
  EXPECT_EQ(parse_error_of([&] { parse_tree_ensemble(j, "x"); }).field(), "/trees");
}

TEST(ModelFiles, SyntaxErrorCarriesLine) {
  const auto p = write_temp("bad_syntax.json", "{\n  \"kind\": \"linear_logit\",\n  \"coefficients\": [1, ]\n}\n");
  const auto e = parse_error_of([&] { load_model(p); });
  EXPECT_EQ(e.line(), 3u);
  EXPECT_NE(std::string(e.what()).find("bad_syntax.json:3"), std::string::npos);
}

TEST(ModelFiles, SchemaErrorsNameTheField) {
  const auto p = write_temp("bad_field.json", R"({"kind": "linear_logit", "coefficients": [1, "two"]})");
  EXPECT_EQ(parse_error_of([&] { load_model(p); }).field(), "/coefficients/1");
  const auto q = write_temp("bad_kind.json", R"({"kind": "forest"})");
  EXPECT_EQ(parse_error_of([&] { load_model(q); }).field(), "/kind");
  const auto r = write_temp("missing.json", R"({"kind": "xor_nonlinear", "coefficients": [1, 2], "interaction": [0, 1]})");
  EXPECT_EQ(parse_error_of([&] { load_model(r); }).field(), "/interaction_weight");
  const auto s = write_temp("bad_tree.json", R"({"kind": "tree_ensemble", "trees": [{"feature": 0, "left": {"leaf": 1}}]})");
  EXPECT_EQ(parse_error_of([&] { load_model(s); }).field(), "/trees/0/threshold");
}

TEST(ModelFiles, MissingFile) { EXPECT_THROW(load_model(kData / "no_such_model.json"), IoError); }

TEST(ModelFiles, SampleSpecsLoad) {
  for (const char* name : {"linear_logit.json", "sparse_linear.json", "xor_nonlinear.json", "toy_linear.json",
                           "toy_nonlinear.json", "noisy_logit.json"}) {
    const auto m = load_model(kData / "models" / name);
    const std::vector<double> x(m->input_dim(), 0.3);
    const double y = m->evaluate(x);
    EXPECT_GE(y, 0.0) << name;
    EXPECT_LE(y, 1.0) << name;
  }
}

TEST(Toy, LinearMidpoint) {
  const ToySurface s(SurfaceId::Linear);
  EXPECT_DOUBLE_EQ(s.evaluate(std::vector<double>{0.0, 7.0}), 0.5);
  EXPECT_DOUBLE_EQ(s.evaluate(std::vector<double>{10.0, -3.0}), 1.0);
}

TEST(Toy, NonlinearNormalizationBracketsSampledValues) {
  const ToySurface s(SurfaceId::Nonlinear);
  const double range = s.upper_bound() - s.lower_bound();
  std::mt19937_64 eng(1);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  double lo = INFINITY, hi = -INFINITY;
  for (int i = 0; i < 400'000; ++i) {
    const double a = u(eng), b = u(eng);
    const double raw = std::sin(a / 2.0) * 10.0 + std::cos(10.0 + a * b / 2.0) * std::cos(a);
    lo = std::min(lo, raw);
    hi = std::max(hi, raw);
  }
  EXPECT_LE(s.lower_bound(), lo);
  EXPECT_GE(s.upper_bound(), hi);
  EXPECT_LT(lo - s.lower_bound(), 2e-3 * range);
  EXPECT_LT(s.upper_bound() - hi, 2e-3 * range);
}

TEST(Toy, NonlinearStaysInUnitInterval) {
  const ToySurface s(SurfaceId::Nonlinear);
  for (double a = -10.0; a <= 10.0; a += 0.37)
    for (double b = -10.0; b <= 10.0; b += 0.41) {
      const double y = s.evaluate(std::vector<double>{a, b});
      EXPECT_GE(y, 0.0);
      EXPECT_LE(y, 1.0);
    }
  EXPECT_EQ(s.clamp_events(), 0u);
}

TEST(Noise, DeterministicPerInput) {
  const LinearLogit m({1.0, 1.0}, 0.0, HashedNoise{1.0, {}, 7});
  const std::vector<double> x{0.2, 0.4};
  EXPECT_EQ(m.evaluate(x), m.evaluate(x));
  const LinearLogit other({1.0, 1.0}, 0.0, HashedNoise{1.0, {}, 8});
  EXPECT_NE(m.evaluate(x), other.evaluate(x));
}

TEST(Noise, StandardNormalAcrossInputs) {
  double s = 0.0, ss = 0.0;
  const int n = 50'000;
  for (int i = 0; i < n; ++i) {
    const std::vector<double> x{static_cast<double>(i), 0.5};
    const double v = detail::hashed_normal(x, 3);
    s += v;
    ss += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(ss / n, 1.0, 0.03);
}

TEST(Noise, ScaleGrowsWithPresentFeatures) {
  const HashedNoise noise{0.02, {0.0, 0.2}, 1};
  EXPECT_DOUBLE_EQ(noise.stddev_at(std::vector<double>{1.0, 0.0}), 0.02);
  EXPECT_NEAR(noise.stddev_at(std::vector<double>{1.0, 1.0}), std::sqrt(0.02 * 0.02 + 0.04), 1e-15);
  EXPECT_THROW(noise.validate(3), InvalidArgument);
  EXPECT_THROW((HashedNoise{-1.0, {}, 0}.validate(1)), InvalidArgument);
}

TEST(Faults, NonFiniteOutput) {
  const Faulty m(std::nan(""));
  try {
    m.evaluate(std::vector<double>{1.0, 2.0});
    FAIL();
  } catch (const ModelFault& e) {
    EXPECT_EQ(e.input(), (std::vector<double>{1.0, 2.0}));
  }
}

TEST(Faults, OutOfRangeIsClampedAndCounted) {
  Faulty m(1.5);
  EXPECT_DOUBLE_EQ(m.evaluate(std::vector<double>{0, 0}), 1.0);
  EXPECT_EQ(m.clamp_events(), 1u);
  m.reset_counters();
  EXPECT_EQ(m.clamp_events(), 0u);
  EXPECT_EQ(m.query_count(), 0u);
}

TEST(Faults, WrongWidth) {
  const LinearLogit m({1.0, 2.0}, 0.0);
  EXPECT_THROW(m.evaluate(std::vector<double>{1.0}), InvalidArgument);
  const auto ctx = InstanceContext::tabular({1, 2, 3}, {0, 0, 0});
  EXPECT_THROW(PerturbationLabeler(ctx, m), InvalidArgument);
}

TEST(Labeler, CachesByMask) {
  const LinearLogit m({1.0, -1.0, 0.5}, 0.2);
  const auto ctx = InstanceContext::tabular({1, 2, 3}, {0, 0, 0});
  PerturbationLabeler lab(ctx, m);
  const auto z = BinaryPerturbation::from_string("101");
  const double a = lab.label(z), b = lab.label(z);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, m.evaluate(to_original_space(ctx, z)));
  EXPECT_EQ(lab.requests(), 2u);
  EXPECT_EQ(lab.hits(), 1u);
  EXPECT_EQ(m.query_count(), 2u);  // one through the labeler, one direct
}

TEST(Labeler, ConcurrentCallersSeeOneQueryPerMask) {
  const LinearLogit m({1.0, -1.0, 0.5, 0.1}, 0.2, HashedNoise{0.5, {}, 2});
  const auto ctx = InstanceContext::tabular({1, 2, 3, 4}, {0, 0, 0, 0});
  PerturbationLabeler lab(ctx, m);
  const auto zs = sample_perturbations(ctx, 400, 5);
  std::vector<std::vector<double>> got(4);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < 4; ++t) pool.emplace_back([&, t] { got[t] = lab.label(zs); });
  for (auto& th : pool) th.join();
  for (std::size_t t = 1; t < 4; ++t) EXPECT_EQ(got[t], got[0]);
  EXPECT_EQ(lab.requests(), 1600u);
  EXPECT_LE(m.query_count(), 16u);
  EXPECT_EQ(lab.misses(), m.query_count());
}
