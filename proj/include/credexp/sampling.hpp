#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "credexp/errors.hpp"
#include "credexp/explainer.hpp"

namespace credexp {

enum class Strategy { Random, Focused };

inline const char* to_string(Strategy s) { return s == Strategy::Random ? "random" : "focused"; }

struct SamplingConfig {
  Strategy strategy = Strategy::Random;
  std::size_t S = 50;
  std::size_t B = 10;
  std::size_t A = 500;
  std::size_t budget = 500;
  std::optional<double> stop_width;
  double stop_alpha = 0.95;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  PriorConfig prior;
  double alpha = 0.95;
  std::optional<bool> intercept;

  void validate() const {
    if (S < 1) throw InvalidArgument("S must be at least 1");
    if (B < 1) throw InvalidArgument("B must be at least 1");
    if (B > A) throw InvalidArgument("batch size B exceeds candidate pool A");
    if (budget < S) throw InvalidArgument("budget must be at least S");
    if (!(temperature > 0.0)) throw InvalidArgument("temperature must be > 0");
    if (!(stop_alpha > 0.0 && stop_alpha < 1.0)) throw InvalidArgument("stop alpha must be in (0,1)");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must be in (0,1)");
    if (stop_width && !(*stop_width > 0.0)) throw InvalidArgument("stop width must be > 0");
    prior.validate();
  }
};

struct TraceRecord {
  std::size_t queries = 0;
  double max_ci_width = 0.0;
  double error_density = 0.0;
  double l1_to_ref = std::numeric_limits<double>::quiet_NaN();
};

struct SamplingTrace {
  Strategy strategy = Strategy::Random;
  std::uint64_t seed = 0;
  std::vector<TraceRecord> records;
  bool stopped_on_width = false;
  std::size_t cache_hits = 0;
  std::size_t model_queries = 0;  // cache misses, anchors included
};

struct SamplingResult {
  PosteriorExplanation explanation;
  SamplingTrace trace;
};

/// Raised when the model fails mid-run; carries the trace up to the failure.
class SamplingFailure : public std::runtime_error {
 public:
  SamplingFailure(const std::string& what, SamplingTrace partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const SamplingTrace& partial_trace() const noexcept { return partial_; }

 private:
  SamplingTrace partial_;
};

/// Softmax of variances / temperature, shifted by the maximum.
inline std::vector<double> selection_distribution(std::span<const double> variances, double temperature) {
  if (variances.empty()) throw InvalidArgument("no candidate variances");
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be > 0");
  const double top = *std::max_element(variances.begin(), variances.end());
  std::vector<double> p(variances.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp((variances[i] - top) / temperature);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

/// Draws k distinct indices with probability proportional to `weights`,
/// renormalising after each pick.
template <class Engine>
std::vector<std::size_t> draw_without_replacement(std::vector<double> weights, std::size_t k, Engine& engine) {
  if (k > weights.size()) throw InvalidArgument("cannot draw more items than the pool holds");
  std::vector<std::size_t> picked;
  picked.reserve(k);
  double total = 0.0;
  for (double w : weights) total += w;
  for (std::size_t n = 0; n < k; ++n) {
    const double u = uniform01(engine) * total;
    double acc = 0.0;
    std::size_t chosen = weights.size();
    std::size_t last_live = weights.size();
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] <= 0.0) continue;
      last_live = i;
      acc += weights[i];
      if (u < acc) {
        chosen = i;
        break;
      }
    }
    if (chosen == weights.size()) chosen = last_live;  // rounding at the tail
    picked.push_back(chosen);
    total -= weights[chosen];
    weights[chosen] = 0.0;
    if (total <= 0.0) {
      total = 0.0;
      for (double w : weights) total += w;
    }
  }
  return picked;
}

namespace detail {

inline double max_width_at(const PosteriorExplanation& post, double alpha) {
  const auto ivs = credible_intervals(post, alpha);
  double w = 0.0;
  for (std::size_t i = post.intercept ? 1 : 0; i < ivs.size(); ++i) w = std::max(w, ivs[i].width());
  return w;
}

inline double l1_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw InvalidArgument("reference has the wrong length");
  return (a - b).cwiseAbs().sum();
}

}  // namespace detail

/// Random or focused acquisition, refitting after each batch of B.
inline SamplingResult run_sampling(const InstanceContext& ctx, const BlackBoxModel& model,
                                   const ProximityKernel& kernel, const SamplingConfig& cfg,
                                   const Eigen::VectorXd* reference = nullptr) {
  cfg.validate();
  if (cfg.strategy == Strategy::Focused && cfg.S < 3)
    throw InvalidArgument("focused sampling needs S >= 3 for a predictive variance");

  SamplingTrace trace;
  trace.strategy = cfg.strategy;
  trace.seed = cfg.seed;
  const std::size_t before = model.query_count();
  PerturbationLabeler labeler(ctx, model);
  std::mt19937_64 engine(cfg.seed);

  auto finish_trace = [&] {
    trace.cache_hits = labeler.hits();
    trace.model_queries = model.query_count() - before;
  };

  try {
    SurrogateAccumulator acc(labeler, kernel, cfg.intercept);
    const std::size_t d = ctx.dim();

    auto record = [&](const PosteriorExplanation& post) {
      TraceRecord r;
      r.queries = acc.sampled();
      r.max_ci_width = detail::max_width_at(post, cfg.stop_alpha);
      r.error_density = post.error_density_at_zero;
      if (reference) r.l1_to_ref = detail::l1_distance(post.feature_importances(), *reference);
      trace.records.push_back(r);
      return cfg.stop_width && r.max_ci_width <= *cfg.stop_width;
    };

    acc.add(draw_perturbations(d, cfg.S, engine));
    PosteriorExplanation post = acc.fit(cfg.prior, cfg.alpha);
    bool done = record(post);

    while (!done && acc.sampled() + cfg.B <= cfg.budget) {
      if (cfg.strategy == Strategy::Random) {
        acc.add(draw_perturbations(d, cfg.B, engine));
      } else {
        const auto pool = draw_perturbations(d, cfg.A, engine);
        std::vector<double> var(pool.size());
        for (std::size_t i = 0; i < pool.size(); ++i) var[i] = predictive_variance(post, pool[i]);
        const auto picks = draw_without_replacement(selection_distribution(var, cfg.temperature), cfg.B, engine);
        for (std::size_t i : picks) acc.add(pool[i]);
      }
      post = acc.fit(cfg.prior, cfg.alpha);
      done = record(post);
    }
    trace.stopped_on_width = done;
    finish_trace();
    return {std::move(post), std::move(trace)};
  } catch (const ModelFault& e) {
    finish_trace();
    throw SamplingFailure(std::string("model failure during sampling: ") + e.what(), std::move(trace));
  }
}

inline SamplingResult run_random(const InstanceContext& ctx, const BlackBoxModel& model,
                                 const ProximityKernel& kernel, SamplingConfig cfg,
                                 const Eigen::VectorXd* reference = nullptr) {
  if (cfg.strategy != Strategy::Random) throw InvalidArgument("run_random needs strategy Random");
  return run_sampling(ctx, model, kernel, cfg, reference);
}

inline SamplingResult run_focused(const InstanceContext& ctx, const BlackBoxModel& model,
                                  const ProximityKernel& kernel, SamplingConfig cfg,
                                  const Eigen::VectorXd* reference = nullptr) {
  if (cfg.strategy != Strategy::Focused) throw InvalidArgument("run_focused needs strategy Focused");
  return run_sampling(ctx, model, kernel, cfg, reference);
}

struct BiasCheck {
  Eigen::VectorXd reference;
  SamplingTrace focused;
  SamplingTrace random;
  std::vector<double> l1_focused() const { return curve(focused); }
  std::vector<double> l1_random() const { return curve(random); }

 private:
  static std::vector<double> curve(const SamplingTrace& t) {
    std::vector<double> out;
    for (const auto& r : t.records) out.push_back(r.l1_to_ref);
    return out;
  }
};

/// L1 distance to a large-budget reference along focused and random runs
/// that share the seed.
inline BiasCheck bias_check(const InstanceContext& ctx, const BlackBoxModel& model,
                            const ProximityKernel& kernel, SamplingConfig cfg, std::size_t n_gt) {
  cfg.validate();
  if (n_gt < 10 * cfg.budget) throw InvalidArgument("ground-truth budget must be at least 10x the sampling budget");
  BiasCheck out;
  out.reference = ground_truth_importances(ctx, model, kernel, n_gt, derive_seed(cfg.seed, 1), cfg.prior,
                                           cfg.intercept);
  cfg.stop_width.reset();
  cfg.strategy = Strategy::Focused;
  out.focused = run_sampling(ctx, model, kernel, cfg, &out.reference).trace;
  cfg.strategy = Strategy::Random;
  out.random = run_sampling(ctx, model, kernel, cfg, &out.reference).trace;
  return out;
}

}  // namespace credexp
