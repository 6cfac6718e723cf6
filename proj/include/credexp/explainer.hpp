#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "credexp/blackbox.hpp"
#include "credexp/interpretable_space.hpp"
#include "credexp/kernels.hpp"
#include "credexp/posterior.hpp"

namespace credexp {

/// Seed streams for independent uses of one user seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return detail::splitmix64(seed ^ detail::splitmix64(stream + 0x632be59bd9b4e019ULL));
}

/// Uniform [0,1) from raw engine bits.
template <class Engine>
double uniform01(Engine& engine) {
  return static_cast<double>(static_cast<std::uint64_t>(engine()) >> 11) * 0x1.0p-53;
}

/// Labels, weights and accumulates perturbations for one instance.
///
/// Under the Shapley kernel the empty and full coalitions are labelled once on
/// construction and entered as clamp rows; without an intercept the labels are
/// centred on f(empty). These anchor rows are not counted as sampled queries.
class SurrogateAccumulator {
 public:
  SurrogateAccumulator(PerturbationLabeler& labeler, const ProximityKernel& kernel,
                       std::optional<bool> intercept = std::nullopt)
      : labeler_(labeler),
        kernel_(kernel),
        stats_(make_stats(labeler, kernel, intercept.value_or(kernel.default_intercept()))) {
    kernel_.validate();
    if (kernel_.kind == KernelKind::Shapley) {
      const std::size_t d = labeler_.context().dim();
      const auto empty = BinaryPerturbation::all_zeros(d);
      const auto full = BinaryPerturbation::all_ones(d);
      f_full_ = labeler_.label(full);
      stats_.add(empty, proximity(kernel_, empty, &diag_), f_empty_);
      stats_.add(full, proximity(kernel_, full, &diag_), f_full_);
      anchor_requests_ = 2;
    }
  }

  void add(const BinaryPerturbation& z) {
    const double pi = proximity(kernel_, z, &diag_);
    const double y = labeler_.label(z);
    stats_.add(z, pi, y);
    ++sampled_;
    if (!is_clamped_coalition(kernel_, z)) {
      pi_sum_ += pi;
      ++pi_rows_;
    }
  }

  void add(std::span<const BinaryPerturbation> zs) {
    for (const auto& z : zs) add(z);
  }

  PosteriorExplanation fit(const PriorConfig& prior, double alpha = 0.95) const {
    return credexp::fit(stats_, prior, alpha);
  }

  /// Sampled perturbations so far (excludes anchor rows).
  std::size_t sampled() const noexcept { return sampled_; }
  /// Mean proximity over sampled, non-clamped rows.
  double mean_proximity() const {
    if (pi_rows_ == 0) throw InvalidState("no sampled rows with a regular proximity weight");
    return pi_sum_ / static_cast<double>(pi_rows_);
  }
  std::size_t anchor_requests() const noexcept { return anchor_requests_; }
  const SufficientStats& stats() const noexcept { return stats_; }
  const ProximityKernel& kernel() const noexcept { return kernel_; }
  const KernelDiagnostics& diagnostics() const noexcept { return diag_; }
  PerturbationLabeler& labeler() noexcept { return labeler_; }
  bool intercept() const noexcept { return stats_.intercept(); }
  double f_empty() const noexcept { return f_empty_; }
  double f_full() const noexcept { return f_full_; }

 private:
  SufficientStats make_stats(PerturbationLabeler& labeler, const ProximityKernel& kernel, bool intercept) {
    double offset = 0.0;
    if (kernel.kind == KernelKind::Shapley) {
      f_empty_ = labeler.label(BinaryPerturbation::all_zeros(labeler.context().dim()));
      if (!intercept) offset = f_empty_;
    }
    return SufficientStats(labeler.context().dim(), intercept, offset);
  }

  PerturbationLabeler& labeler_;
  ProximityKernel kernel_;
  double f_empty_ = 0.0;
  double f_full_ = 0.0;
  SufficientStats stats_;
  KernelDiagnostics diag_;
  std::size_t sampled_ = 0;
  std::size_t anchor_requests_ = 0;
  double pi_sum_ = 0.0;
  std::size_t pi_rows_ = 0;
};

/// One-shot explanation from n random perturbations.
inline PosteriorExplanation explain_random(const InstanceContext& ctx, const BlackBoxModel& model,
                                           const ProximityKernel& kernel, std::size_t n,
                                           std::uint64_t seed, const PriorConfig& prior = {},
                                           double alpha = 0.95,
                                           std::optional<bool> intercept = std::nullopt) {
  PerturbationLabeler labeler(ctx, model);
  SurrogateAccumulator acc(labeler, kernel, intercept);
  acc.add(sample_perturbations(ctx, n, seed));
  return acc.fit(prior, alpha);
}

/// Reference importances: the posterior mean from a large random budget.
inline Eigen::VectorXd ground_truth_importances(const InstanceContext& ctx, const BlackBoxModel& model,
                                                const ProximityKernel& kernel, std::size_t n_gt,
                                                std::uint64_t seed, const PriorConfig& prior = {},
                                                std::optional<bool> intercept = std::nullopt) {
  return explain_random(ctx, model, kernel, n_gt, seed, prior, 0.95, intercept).feature_importances();
}

}  // namespace credexp
