#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "credexp/blackbox.hpp"
#include "credexp/errors.hpp"
#include "credexp/explainer.hpp"
#include "credexp/ptg.hpp"
#include "credexp/sampling.hpp"

namespace credexp {

/// Runs fn(i) for i in [0, n) on a small thread pool. Results must be written
/// by index so the outcome does not depend on scheduling.
template <class F>
void parallel_for(std::size_t n, F&& fn, std::size_t threads = 0) {
  if (threads == 0) threads = std::max(1U, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// One explained instance of one black box.
struct SuiteCase {
  std::string dataset;
  std::string id;
  std::shared_ptr<const BlackBoxModel> model;
  InstanceContext ctx;
};

struct SuiteOptions {
  std::size_t per_model = 40;
  std::uint64_t seed = 123;
  double noise_sd = 0.0;  // logit noise on the logistic families
  std::vector<std::string> families = {"linear_logit", "sparse_linear", "xor_nonlinear", "toy_linear",
                                       "toy_nonlinear"};
};

/// Bundled synthetic benchmark. Each case draws its own model parameters and
/// instance; absent features are replaced by zeros.
///
///   linear_logit   d=5,  beta ~ N(0,1), b ~ N(0,0.5^2)
///   sparse_linear  d=10, 3 active coefficients of size U(0.05,0.15), b = 0.5
///   xor_nonlinear  d=5,  beta ~ N(0,0.5^2), 2 x0 x1 interaction
///   toy_*          d=2,  instance ~ U[-10,10]^2
/// The non-toy instances are drawn from N(0, 1.5^2).
inline std::vector<SuiteCase> synthetic_suite(const SuiteOptions& opt = {}) {
  std::vector<SuiteCase> out;
  for (std::size_t f = 0; f < opt.families.size(); ++f) {
    const std::string& fam = opt.families[f];
    for (std::size_t t = 0; t < opt.per_model; ++t) {
      std::mt19937_64 rng(derive_seed(opt.seed, 1000 * f + t));
      std::normal_distribution<double> n01(0.0, 1.0);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      const HashedNoise noise{opt.noise_sd, {}, derive_seed(opt.seed, 7'000'000 + 1000 * f + t)};
      std::shared_ptr<const BlackBoxModel> model;
      std::size_t d = 0;
      if (fam == "linear_logit") {
        d = 5;
        std::vector<double> beta(d);
        for (auto& b : beta) b = n01(rng);
        const double b0 = 0.5 * n01(rng);
        model = std::make_shared<LinearLogit>(beta, b0, noise);
      } else if (fam == "sparse_linear") {
        d = 10;
        std::vector<double> beta(d, 0.0);
        for (std::size_t j = 0; j < 3; ++j) beta[j] = (0.05 + 0.1 * u(rng)) * (u(rng) < 0.5 ? -1.0 : 1.0);
        model = std::make_shared<SparseLinear>(beta, 0.5);
      } else if (fam == "xor_nonlinear") {
        d = 5;
        std::vector<double> beta(d);
        for (auto& b : beta) b = 0.5 * n01(rng);
        model = std::make_shared<XorNonlinear>(beta, 0.0, 0, 1, 2.0, noise);
      } else if (fam == "toy_linear" || fam == "toy_nonlinear") {
        d = 2;
        model = std::make_shared<ToySurface>(fam == "toy_linear" ? SurfaceId::Linear : SurfaceId::Nonlinear,
                                             noise);
      } else {
        throw InvalidArgument("unknown suite family '" + fam + "'");
      }
      std::vector<double> x(d);
      if (d == 2)
        for (auto& v : x) v = -10.0 + 20.0 * u(rng);
      else
        for (auto& v : x) v = 1.5 * n01(rng);
      out.push_back({fam, fam + "#" + std::to_string(t), model,
                     InstanceContext::tabular(std::move(x), std::vector<double>(d, 0.0))});
    }
  }
  return out;
}

/// Linear probability surface over d=10 features in two groups of five; the
/// second group carries ten times the label noise of the first. The instance
/// is all ones against a zero baseline, so masks are the model inputs.
inline SuiteCase heteroscedastic_case(std::uint64_t seed, double base_noise = 0.02, double ratio = 10.0) {
  constexpr std::size_t d = 10;
  std::mt19937_64 rng(derive_seed(seed, 0x4e7));
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> beta(d);
  for (auto& b : beta) b = 0.05 * n01(rng);
  HashedNoise noise;
  noise.seed = derive_seed(seed, 0x4e8);
  noise.scales.assign(d, base_noise);
  for (std::size_t j = d / 2; j < d; ++j) noise.scales[j] = base_noise * ratio;
  return {"heteroscedastic", "heteroscedastic#" + std::to_string(seed),
          std::make_shared<SparseLinear>(beta, 0.5, noise),
          InstanceContext::tabular(std::vector<double>(d, 1.0), std::vector<double>(d, 0.0))};
}

/// Ground-truth importances shared between experiments.
class GroundTruthCache {
 public:
  Eigen::VectorXd get(const SuiteCase& c, const ProximityKernel& kernel, std::size_t n_gt, std::uint64_t seed) {
    const std::string key = c.id + "|" + kernel.describe() + "|" + std::to_string(n_gt) + "|" + std::to_string(seed);
    {
      std::lock_guard lock(mu_);
      if (auto it = table_.find(key); it != table_.end()) {
        ++hits_;
        return it->second;
      }
    }
    Eigen::VectorXd v = ground_truth_importances(c.ctx, *c.model, kernel, n_gt, seed);
    std::lock_guard lock(mu_);
    return table_.emplace(key, std::move(v)).first->second;
  }
  std::size_t size() const {
    std::lock_guard lock(mu_);
    return table_.size();
  }
  std::size_t hits() const {
    std::lock_guard lock(mu_);
    return hits_;
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, Eigen::VectorXd> table_;
  std::size_t hits_ = 0;
};

struct CoverageOptions {
  std::size_t n_fit = 100;
  std::size_t n_gt = 10'000;
  double alpha = 0.95;
  PriorConfig prior;
  std::vector<std::uint64_t> seeds = {0};
  std::size_t threads = 0;
};

struct CoverageRow {
  std::string dataset;
  std::size_t pairs = 0;
  std::size_t hits = 0;
  double coverage = 0.0;
  double se = 0.0;
};

struct CalibrationReport {
  std::size_t trials = 0;
  std::size_t pairs = 0;
  std::size_t hits = 0;
  double coverage = 0.0;
  double se = 0.0;  // binomial standard error of `coverage`
  std::vector<CoverageRow> per_dataset;
  std::size_t n_fit = 0;
  std::size_t n_gt = 0;
  double alpha = 0.95;
};

namespace detail {

inline void finish_row(CoverageRow& r) {
  r.coverage = r.pairs ? static_cast<double>(r.hits) / static_cast<double>(r.pairs) : 0.0;
  r.se = r.pairs ? std::sqrt(r.coverage * (1.0 - r.coverage) / static_cast<double>(r.pairs)) : 0.0;
}

inline std::uint64_t task_seed(std::uint64_t seed, std::size_t case_index, std::uint64_t stream) {
  return derive_seed(seed, 4 * static_cast<std::uint64_t>(case_index) + stream);
}

}  // namespace detail

/// Fraction of (instance, feature) pairs whose credible interval from n_fit
/// perturbations contains the n_gt reference importance. When n_fit == n_gt
/// the reference is fitted on the fit's own perturbations.
inline CalibrationReport coverage_calibration(const std::vector<SuiteCase>& cases, const ProximityKernel& kernel,
                                              const CoverageOptions& opt, GroundTruthCache* cache = nullptr) {
  if (cases.empty()) throw InvalidArgument("no calibration cases");
  if (opt.seeds.empty()) throw InvalidArgument("no calibration seeds");
  if (opt.n_gt != opt.n_fit && opt.n_gt < 10 * opt.n_fit)
    throw InvalidArgument("ground-truth budget must be at least 10x the fit budget");
  GroundTruthCache local;
  if (!cache) cache = &local;

  const std::size_t tasks = cases.size() * opt.seeds.size();
  std::vector<std::vector<char>> inside(tasks);
  parallel_for(
      tasks,
      [&](std::size_t k) {
        const std::size_t i = k / opt.seeds.size();
        const std::uint64_t s = opt.seeds[k % opt.seeds.size()];
        const std::uint64_t fit_seed = detail::task_seed(s, i, 2);
        const std::uint64_t gt_seed = opt.n_gt == opt.n_fit ? fit_seed : detail::task_seed(s, i, 1);
        const Eigen::VectorXd gt = cache->get(cases[i], kernel, opt.n_gt, gt_seed);
        const auto post = explain_random(cases[i].ctx, *cases[i].model, kernel, opt.n_fit, fit_seed, opt.prior,
                                         opt.alpha);
        const auto ivs = post.feature_intervals();
        for (std::size_t j = 0; j < ivs.size(); ++j)
          inside[k].push_back(ivs[j].contains(gt[static_cast<Eigen::Index>(j)]) ? 1 : 0);
      },
      opt.threads);

  CalibrationReport rep;
  rep.trials = tasks;
  rep.n_fit = opt.n_fit;
  rep.n_gt = opt.n_gt;
  rep.alpha = opt.alpha;
  std::map<std::string, CoverageRow> rows;
  std::vector<std::string> order;
  for (std::size_t k = 0; k < tasks; ++k) {
    const auto& name = cases[k / opt.seeds.size()].dataset;
    if (!rows.count(name)) order.push_back(name);
    auto& row = rows[name];
    row.dataset = name;
    for (char c : inside[k]) {
      ++row.pairs;
      row.hits += static_cast<std::size_t>(c);
    }
  }
  for (const auto& name : order) {
    auto row = rows[name];
    detail::finish_row(row);
    rep.pairs += row.pairs;
    rep.hits += row.hits;
    rep.per_dataset.push_back(row);
  }
  CoverageRow total{"all", rep.pairs, rep.hits};
  detail::finish_row(total);
  rep.coverage = total.coverage;
  rep.se = total.se;
  return rep;
}

struct PtgCalibrationOptions {
  std::size_t S = 200;
  std::vector<double> targets = {0.05, 0.1, 0.2, 0.4};
  double alpha = 0.95;
  WidthConvention convention = WidthConvention::Full;
  std::vector<std::uint64_t> seeds = {0};
  PriorConfig prior;
  std::size_t cap = 1'000'000;
  std::size_t threads = 0;
};

struct PtgRunRecord {
  std::string case_id;
  std::uint64_t seed = 0;
  double W = 0.0;
  double s_sq = 0.0;
  double pi_bar = 0.0;
  double raw = 0.0;
  std::size_t G = 0;
  bool capped = false;
  double observed = 0.0;
  double ratio = 0.0;
};

struct PtgTargetSummary {
  double W = 0.0;
  std::size_t runs = 0;
  double median_G = 0.0;
  double median_observed = 0.0;
  double median_ratio = 0.0;
  std::size_t capped = 0;
};

struct PtgCalibrationReport {
  std::vector<PtgRunRecord> runs;
  std::vector<PtgTargetSummary> targets;
  double median_ratio_across_targets = 0.0;
};

/// Median credible-interval size across features, measured the same way W is
/// read: the full width under Full, the half width under Half.
inline double observed_width(const PosteriorExplanation& post, WidthConvention convention) {
  const double w = post.median_feature_width();
  return convention == WidthConvention::Full ? w : 0.5 * w;
}

/// For each target W: estimate G from S seed perturbations, refit on the seed
/// set extended by G further random perturbations, and compare the observed
/// width with W.
inline PtgCalibrationReport ptg_calibration(const std::vector<SuiteCase>& cases, const ProximityKernel& kernel,
                                            const PtgCalibrationOptions& opt) {
  if (opt.targets.empty()) throw InvalidArgument("no PTG targets");
  if (cases.empty() || opt.seeds.empty()) throw InvalidArgument("no PTG cases or seeds");
  const std::size_t per_case = opt.seeds.size() * opt.targets.size();
  std::vector<PtgRunRecord> runs(cases.size() * per_case);
  parallel_for(
      runs.size(),
      [&](std::size_t k) {
        const std::size_t i = k / per_case;
        const std::uint64_t s = opt.seeds[(k % per_case) / opt.targets.size()];
        const double W = opt.targets[k % opt.targets.size()];
        const std::uint64_t run_seed = detail::task_seed(s, i, 3);
        const auto& c = cases[i];
        const auto seed_run =
            seed_then_estimate(c.ctx, *c.model, kernel, opt.S, W, opt.alpha, run_seed, opt.convention, opt.prior);
        PtgEstimate est = seed_run.estimate;
        if (est.G > opt.cap) {
          est.G = opt.cap;
          est.capped = true;
        }
        const auto post = explain_random(c.ctx, *c.model, kernel, opt.S + est.G, run_seed, opt.prior, opt.alpha);
        PtgRunRecord& r = runs[k];
        r.case_id = c.id;
        r.seed = s;
        r.W = W;
        r.s_sq = seed_run.inputs.s_sq_S;
        r.pi_bar = seed_run.inputs.pi_bar_S;
        r.raw = est.raw;
        r.G = est.G;
        r.capped = est.capped;
        r.observed = observed_width(post, opt.convention);
        r.ratio = r.observed / W;
      },
      opt.threads);

  PtgCalibrationReport rep;
  rep.runs = std::move(runs);
  std::vector<double> ratios;
  for (double W : opt.targets) {
    PtgTargetSummary t;
    t.W = W;
    std::vector<double> g, obs, ratio;
    for (const auto& r : rep.runs)
      if (r.W == W) {
        g.push_back(static_cast<double>(r.G));
        obs.push_back(r.observed);
        ratio.push_back(r.ratio);
        t.capped += r.capped ? 1 : 0;
      }
    t.runs = g.size();
    t.median_G = median(g);
    t.median_observed = median(obs);
    t.median_ratio = median(ratio);
    ratios.push_back(t.median_ratio);
    rep.targets.push_back(t);
  }
  rep.median_ratio_across_targets = median(ratios);
  return rep;
}

struct RaceResult {
  std::uint64_t seed = 0;
  Strategy strategy = Strategy::Random;
  std::size_t queries = 0;
  bool reached = false;
  double final_width = 0.0;
};

/// Queries each strategy needs to bring the max credible-interval width down
/// to cfg.stop_width, one paired run per seed.
inline std::vector<RaceResult> sampling_race(const std::function<SuiteCase(std::uint64_t)>& make_case,
                                             const ProximityKernel& kernel, SamplingConfig cfg,
                                             const std::vector<std::uint64_t>& seeds, std::size_t threads = 0) {
  if (!cfg.stop_width) throw InvalidArgument("a race needs a stop width");
  std::vector<RaceResult> out(2 * seeds.size());
  parallel_for(
      out.size(),
      [&](std::size_t k) {
        const std::uint64_t s = seeds[k / 2];
        const SuiteCase c = make_case(s);
        SamplingConfig run = cfg;
        run.seed = derive_seed(s, 5);
        run.strategy = k % 2 == 0 ? Strategy::Random : Strategy::Focused;
        const auto res = run_sampling(c.ctx, *c.model, kernel, run);
        out[k] = {s, run.strategy, res.trace.records.back().queries, res.trace.stopped_on_width,
                  res.trace.records.back().max_ci_width};
      },
      threads);
  return out;
}

/// Maps an instance to importances; the seed drives any internal sampling.
using Explainer = std::function<Eigen::VectorXd(const InstanceContext&, std::uint64_t)>;

/// Classic weighted least squares on n random perturbations.
inline Explainer plain_wls_explainer(std::shared_ptr<const BlackBoxModel> model, ProximityKernel kernel,
                                     std::size_t n) {
  return [model = std::move(model), kernel, n](const InstanceContext& ctx, std::uint64_t seed) {
    PerturbationLabeler labeler(ctx, *model);
    const auto zs = sample_perturbations(ctx, n, seed);
    std::vector<double> pi, y;
    for (const auto& z : zs) {
      pi.push_back(proximity(kernel, z));
      y.push_back(labeler.label(z));
    }
    const bool intercept = kernel.default_intercept();
    double offset = 0.0;
    std::vector<BinaryPerturbation> rows(zs.begin(), zs.end());
    if (kernel.kind == KernelKind::Shapley) {
      const std::size_t d = ctx.dim();
      for (const auto& z : {BinaryPerturbation::all_zeros(d), BinaryPerturbation::all_ones(d)}) {
        rows.push_back(z);
        pi.push_back(proximity(kernel, z));
        y.push_back(labeler.label(z));
      }
      offset = y[y.size() - 2];
    }
    const auto set = PerturbationSet::from_rows(rows, pi, y, intercept, offset);
    const Eigen::VectorXd phi = ridge_wls(set.Z, set.Pi, (set.Y.array() - offset).matrix());
    return Eigen::VectorXd(phi.tail(static_cast<Eigen::Index>(ctx.dim())));
  };
}

/// Posterior mean after an acquisition run with the given config.
inline Explainer bayes_explainer(std::shared_ptr<const BlackBoxModel> model, ProximityKernel kernel,
                                 SamplingConfig cfg) {
  return [model = std::move(model), kernel, cfg](const InstanceContext& ctx, std::uint64_t seed) {
    SamplingConfig run = cfg;
    run.seed = seed;
    return run_sampling(ctx, *model, kernel, run).explanation.feature_importances();
  };
}

struct StabilityOptions {
  double epsilon = 0.1;
  std::size_t n_neighbors = 25;
  std::uint64_t seed = 0;
  std::vector<double> lower;  // per original feature; empty: range of the instances
  std::vector<double> upper;
  std::size_t threads = 0;
};

struct StabilityReport {
  std::vector<double> lipschitz_a;
  std::vector<double> lipschitz_b;
  std::vector<double> improvement_pct;  // 100 (L_b - L_a) / L_b per instance
  double median_improvement_pct = 0.0;
  double mean_improvement_pct = 0.0;
  double epsilon = 0.0;
  std::size_t n_neighbors = 0;
};

/// Local Lipschitz estimate max_j ||phi_i - phi_j|| / ||x_i - x_j|| over
/// neighbours drawn uniformly from the L-infinity ball of radius epsilon in
/// min-max normalised space. Every explanation gets its own sampling seed, as a
/// stochastic explainer would in practice; explainers a and b share neighbours
/// and seeds so the comparison is paired.
inline StabilityReport lipschitz_stability(const Explainer& a, const Explainer& b,
                                           const std::vector<InstanceContext>& instances,
                                           const StabilityOptions& opt) {
  if (instances.empty()) throw InvalidArgument("no instances");
  if (!(opt.epsilon > 0.0) || opt.n_neighbors == 0) throw InvalidArgument("epsilon and neighbour count must be > 0");
  const std::size_t dim = instances.front().original_dim();
  std::vector<double> lo = opt.lower, hi = opt.upper;
  if (lo.empty() || hi.empty()) {
    lo.assign(dim, INFINITY);
    hi.assign(dim, -INFINITY);
    for (const auto& c : instances)
      for (std::size_t j = 0; j < dim; ++j) {
        lo[j] = std::min(lo[j], c.x_original()[j]);
        hi[j] = std::max(hi[j], c.x_original()[j]);
      }
  }
  if (lo.size() != dim || hi.size() != dim) throw InvalidArgument("normalisation bounds have the wrong length");
  std::vector<double> span(dim);
  for (std::size_t j = 0; j < dim; ++j) span[j] = hi[j] - lo[j] > 1e-12 ? hi[j] - lo[j] : 1.0;

  StabilityReport rep;
  rep.epsilon = opt.epsilon;
  rep.n_neighbors = opt.n_neighbors;
  rep.lipschitz_a.resize(instances.size());
  rep.lipschitz_b.resize(instances.size());
  parallel_for(
      instances.size(),
      [&](std::size_t i) {
        const auto& ctx = instances[i];
        const std::uint64_t seed = derive_seed(opt.seed, i);
        std::mt19937_64 rng(derive_seed(opt.seed, 1'000'000 + i));
        const Eigen::VectorXd pa = a(ctx, seed), pb = b(ctx, seed);
        double la = 0.0, lb = 0.0;
        for (std::size_t k = 0; k < opt.n_neighbors; ++k) {
          std::vector<double> x = ctx.x_original();
          double dist = 0.0;
          while (dist < 1e-9) {
            double sq = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
              const double step = opt.epsilon * (2.0 * uniform01(rng) - 1.0);
              x[j] = ctx.x_original()[j] + step * span[j];
              sq += step * step;
            }
            dist = std::sqrt(sq);
          }
          const auto nb = ctx.with_point(x);
          const std::uint64_t nb_seed = derive_seed(seed, k + 1);
          la = std::max(la, (a(nb, nb_seed) - pa).norm() / dist);
          lb = std::max(lb, (b(nb, nb_seed) - pb).norm() / dist);
        }
        rep.lipschitz_a[i] = la;
        rep.lipschitz_b[i] = lb;
      },
      opt.threads);
  double total = 0.0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const double lb = rep.lipschitz_b[i];
    const double pct = lb > 0.0 ? 100.0 * (lb - rep.lipschitz_a[i]) / lb : 0.0;
    rep.improvement_pct.push_back(pct);
    total += pct;
  }
  rep.median_improvement_pct = median(rep.improvement_pct);
  rep.mean_improvement_pct = total / static_cast<double>(instances.size());
  return rep;
}

struct SensitivityCell {
  double n0 = 0.0;
  double sigma0_sq = 0.0;
  CalibrationReport report;
};

/// Coverage for every (n0, sigma0^2) pair; reference fits are shared.
inline std::vector<SensitivityCell> prior_sensitivity_grid(const std::vector<double>& n0_values,
                                                           const std::vector<double>& sigma0_values,
                                                           const std::vector<SuiteCase>& cases,
                                                           const ProximityKernel& kernel, CoverageOptions opt,
                                                           GroundTruthCache* cache = nullptr) {
  if (n0_values.empty() || sigma0_values.empty()) throw InvalidArgument("prior grid is empty");
  GroundTruthCache local;
  if (!cache) cache = &local;
  std::vector<SensitivityCell> out;
  for (double n0 : n0_values)
    for (double s0 : sigma0_values) {
      opt.prior = {n0, s0};
      out.push_back({n0, s0, coverage_calibration(cases, kernel, opt, cache)});
    }
  return out;
}

}  // namespace credexp
