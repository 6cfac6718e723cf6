#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "credexp/errors.hpp"
#include "credexp/interpretable_space.hpp"

namespace credexp {

enum class KernelKind { Exponential, Shapley };
enum class DistanceKind { Cosine, L2 };

/// Proximity rule pi_x(z).
///
/// Exponential: exp(-D(x, z)^2 / width^2) with D the cosine or L2 distance
/// between the all-ones reference mask and z. A non-positive width means
/// "use 0.75 * sqrt(d)".
///
/// Shapley: (d-1) / (C(d,|z|) |z| (d-|z|)) for 0 < |z| < d and `clamp_weight`
/// for the empty and full coalitions. With `normalize` set the non-clamped
/// weights are divided by their mean under Bernoulli(0.5) masks, which puts
/// them on the same scale as the unit prior on the coefficients.
struct ProximityKernel {
  KernelKind kind = KernelKind::Exponential;
  double width = 0.0;
  DistanceKind distance = DistanceKind::Cosine;
  double clamp_weight = 1e6;
  bool normalize = true;

  static ProximityKernel exponential(double width = 0.0, DistanceKind distance = DistanceKind::Cosine) {
    ProximityKernel k;
    k.kind = KernelKind::Exponential;
    k.width = width;
    k.distance = distance;
    k.validate();
    return k;
  }

  static ProximityKernel shapley(double clamp_weight = 1e6, bool normalize = true) {
    ProximityKernel k;
    k.kind = KernelKind::Shapley;
    k.clamp_weight = clamp_weight;
    k.normalize = normalize;
    k.validate();
    return k;
  }

  void validate() const {
    if (!std::isfinite(width)) throw InvalidArgument("kernel width must be finite");
    if (kind == KernelKind::Shapley && !(clamp_weight >= 1e4))
      throw InvalidArgument("Shapley clamp weight must be at least 1e4");
  }

  double effective_width(std::size_t d) const {
    return width > 0.0 ? width : 0.75 * std::sqrt(static_cast<double>(d));
  }

  /// The Shapley kernel pins phi_0 and the additivity constraint with clamp
  /// rows, so it is fitted without an intercept column by default.
  bool default_intercept() const noexcept { return kind == KernelKind::Exponential; }

  std::string describe() const {
    if (kind == KernelKind::Exponential) {
      std::string s = "exponential(distance=";
      s += distance == DistanceKind::Cosine ? "cosine" : "l2";
      s += ",width=" + (width > 0.0 ? std::to_string(width) : std::string("auto")) + ")";
      return s;
    }
    return "shapley(clamp=" + std::to_string(clamp_weight) +
           ",normalize=" + (normalize ? "true" : "false") + ")";
  }
};

/// Counts degenerate inputs seen while weighting.
struct KernelDiagnostics {
  std::size_t zero_norm_events = 0;
};

/// Distance between the all-ones reference mask and z. Zero-norm masks under
/// cosine distance are treated as maximally distant.
inline double mask_distance(DistanceKind distance, const BinaryPerturbation& x_bits,
                            const BinaryPerturbation& z, KernelDiagnostics* diag = nullptr) {
  if (x_bits.size() != z.size()) throw InvalidArgument("mask widths differ");
  double dot = 0.0, nx = 0.0, nz = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double a = x_bits[i], b = z[i];
    dot += a * b;
    nx += a * a;
    nz += b * b;
    sq += (a - b) * (a - b);
  }
  if (distance == DistanceKind::L2) return std::sqrt(sq);
  if (nx == 0.0 || nz == 0.0) {
    if (diag) ++diag->zero_norm_events;
    return 1.0;
  }
  return 1.0 - dot / (std::sqrt(nx) * std::sqrt(nz));
}

inline double exponential_weight(const ProximityKernel& kernel, const BinaryPerturbation& x_bits,
                                 const BinaryPerturbation& z, KernelDiagnostics* diag = nullptr) {
  if (kernel.kind != KernelKind::Exponential)
    throw InvalidArgument("exponential_weight needs an exponential kernel");
  const double width = kernel.effective_width(z.size());
  const double dist = mask_distance(kernel.distance, x_bits, z, diag);
  return std::exp(-(dist * dist) / (width * width));
}

inline double binomial_coefficient(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  return std::round(std::exp(std::lgamma(static_cast<double>(n) + 1.0) -
                             std::lgamma(static_cast<double>(k) + 1.0) -
                             std::lgamma(static_cast<double>(n - k) + 1.0)));
}

/// Raw Shapley kernel value for a coalition of the given size.
inline double shapley_weight(const ProximityKernel& kernel, std::size_t d, std::size_t coalition) {
  if (kernel.kind != KernelKind::Shapley)
    throw InvalidArgument("shapley_weight needs a Shapley kernel");
  if (d < 2) throw InvalidArgument("Shapley kernel needs d >= 2");
  if (coalition > d) throw InvalidArgument("coalition size exceeds d");
  if (coalition == 0 || coalition == d) return kernel.clamp_weight;
  const double k = static_cast<double>(coalition);
  const double dd = static_cast<double>(d);
  return (dd - 1.0) / (binomial_coefficient(d, coalition) * k * (dd - k));
}

/// 1 / E[raw weight | 0 < |z| < d] for z ~ Bernoulli(0.5)^d.
inline double shapley_scale(std::size_t d) {
  if (d < 2) throw InvalidArgument("Shapley kernel needs d >= 2");
  const double dd = static_cast<double>(d);
  double sum = 0.0;
  for (std::size_t k = 1; k < d; ++k) {
    const double kk = static_cast<double>(k);
    sum += (dd - 1.0) / (kk * (dd - kk));  // C(d,k) * raw(k)
  }
  const double interior = std::exp2(dd) - 2.0;
  return interior / sum;
}

/// True for the empty and full coalitions, which the Shapley kernel clamps.
inline bool is_clamped_coalition(const ProximityKernel& kernel, const BinaryPerturbation& z) {
  if (kernel.kind != KernelKind::Shapley) return false;
  const std::size_t k = coalition_size(z);
  return k == 0 || k == z.size();
}

/// pi_x(z) for the kernel's kind, reference mask = all ones.
inline double proximity(const ProximityKernel& kernel, const BinaryPerturbation& z,
                        KernelDiagnostics* diag = nullptr) {
  if (kernel.kind == KernelKind::Exponential)
    return exponential_weight(kernel, BinaryPerturbation::all_ones(z.size()), z, diag);
  const double raw = shapley_weight(kernel, z.size(), coalition_size(z));
  if (is_clamped_coalition(kernel, z) || !kernel.normalize) return raw;
  return raw * shapley_scale(z.size());
}

}  // namespace credexp
