#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>

#include "credexp/distributions.hpp"
#include "credexp/errors.hpp"
#include "credexp/explainer.hpp"

namespace credexp {

struct PtgInputs {
  double s_sq_S = 0.0;
  double pi_bar_S = 1.0;
  std::size_t S = 0;
  double W = 0.1;
  double alpha = 0.95;
  WidthConvention convention = WidthConvention::Full;

  void validate() const {
    if (!(s_sq_S >= 0.0) || !std::isfinite(s_sq_S)) throw InvalidArgument("s^2_S must be >= 0");
    if (!(pi_bar_S > 0.0) || !std::isfinite(pi_bar_S)) throw InvalidArgument("mean proximity must be > 0");
    if (S < 10) throw InvalidArgument("PTG needs at least 10 seed perturbations");
    if (!(W > 0.0) || !std::isfinite(W)) throw InvalidArgument("target width must be > 0");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must be in (0,1)");
  }
};

struct PtgEstimate {
  std::size_t G = 0;
  std::size_t total = 0;
  double raw = 0.0;
  double multiplier = 0.0;
  bool capped = false;
};

/// raw = 4 s^2_S / (pi_bar_S (W/m)^2) - S, G = max(0, ceil(raw)) capped at `cap`.
inline PtgEstimate estimate_ptg(const PtgInputs& in, std::size_t cap = 1'000'000) {
  in.validate();
  PtgEstimate out;
  out.multiplier = normal_two_tailed_multiplier(in.alpha, in.convention);
  const double ratio = in.W / out.multiplier;
  out.raw = 4.0 * in.s_sq_S / (in.pi_bar_S * ratio * ratio) - static_cast<double>(in.S);
  if (out.raw > 0.0) {
    const double g = std::ceil(out.raw);
    if (g > static_cast<double>(cap)) {
      out.G = cap;
      out.capped = true;
    } else {
      out.G = static_cast<std::size_t>(g);
    }
  }
  out.total = in.S + out.G;
  return out;
}

struct PtgRun {
  PosteriorExplanation seed_fit;
  PtgInputs inputs;
  PtgEstimate estimate;
};

/// Fits S random perturbations and estimates G for target width W.
inline PtgRun seed_then_estimate(const InstanceContext& ctx, const BlackBoxModel& model,
                                 const ProximityKernel& kernel, std::size_t S, double W, double alpha,
                                 std::uint64_t seed, WidthConvention convention = WidthConvention::Full,
                                 const PriorConfig& prior = {}, std::optional<bool> intercept = std::nullopt) {
  if (S < 10) throw InvalidArgument("PTG needs at least 10 seed perturbations");
  PerturbationLabeler labeler(ctx, model);
  SurrogateAccumulator acc(labeler, kernel, intercept);
  acc.add(sample_perturbations(ctx, S, seed));
  PtgRun run;
  run.seed_fit = acc.fit(prior, alpha);
  run.inputs = {run.seed_fit.s_sq, acc.mean_proximity(), S, W, alpha, convention};
  run.estimate = estimate_ptg(run.inputs);
  return run;
}

}  // namespace credexp
