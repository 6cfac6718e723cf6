#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "credexp/errors.hpp"

namespace credexp {

/// Scaled inverse chi-squared: draws are dof * scale / chi2(dof).
struct ScaledInvChiSq {
  double dof = 1.0;
  double scale = 1.0;

  ScaledInvChiSq() = default;
  ScaledInvChiSq(double dof_, double scale_) : dof(dof_), scale(scale_) {
    if (!(dof > 0.0) || !std::isfinite(dof)) throw InvalidArgument("inv-chi2 dof must be positive");
    if (!(scale > 0.0) || !std::isfinite(scale))
      throw InvalidArgument("inv-chi2 scale must be positive");
  }

  /// Defined for dof > 2.
  double mean() const { return dof > 2.0 ? dof * scale / (dof - 2.0) : INFINITY; }

  template <class Engine>
  double draw(Engine& engine) const {
    std::chi_squared_distribution<double> chi2(dof);
    double c = chi2(engine);
    while (c <= 0.0) c = chi2(engine);
    return dof * scale / c;
  }
};

/// Location-scale Student t.
struct StudentT3 {
  double dof = 1.0;
  double location = 0.0;
  double scale_sq = 1.0;

  StudentT3() = default;
  StudentT3(double dof_, double location_, double scale_sq_)
      : dof(dof_), location(location_), scale_sq(scale_sq_) {
    if (!(dof > 0.0)) throw InvalidArgument("t dof must be positive");
    if (!(scale_sq > 0.0)) throw InvalidArgument("t scale_sq must be positive");
  }

  /// Defined for dof > 2.
  double variance() const {
    if (!(dof > 2.0)) throw InvalidState("t variance needs dof > 2");
    return scale_sq * dof / (dof - 2.0);
  }

  /// Normal draw with variance from the matching scaled inverse chi-squared.
  template <class Engine>
  double draw(Engine& engine) const {
    const double var = ScaledInvChiSq(dof, scale_sq).draw(engine);
    std::normal_distribution<double> normal(0.0, 1.0);
    return location + std::sqrt(var) * normal(engine);
  }
};

inline std::vector<double> sample_scaled_inv_chisq(const ScaledInvChiSq& dist, std::uint64_t seed,
                                                   std::size_t n) {
  if (n == 0) throw InvalidArgument("sample count must be at least 1");
  std::mt19937_64 engine(seed);
  std::vector<double> out(n);
  for (auto& v : out) v = dist.draw(engine);
  return out;
}

inline std::vector<double> sample_student_t(const StudentT3& dist, std::uint64_t seed,
                                            std::size_t n) {
  if (n == 0) throw InvalidArgument("sample count must be at least 1");
  std::mt19937_64 engine(seed);
  std::vector<double> out(n);
  for (auto& v : out) v = dist.draw(engine);
  return out;
}

inline double student_t_pdf(const StudentT3& dist, double value) {
  const double nu = dist.dof;
  const double scale = std::sqrt(dist.scale_sq);
  const double t = (value - dist.location) / scale;
  const double log_norm = std::lgamma((nu + 1.0) / 2.0) - std::lgamma(nu / 2.0) -
                          0.5 * std::log(nu * std::numbers::pi);
  const double log_kernel = -0.5 * (nu + 1.0) * std::log1p(t * t / nu);
  return std::exp(log_norm + log_kernel) / scale;
}

/// Standard Student t quantile.
inline double student_t_quantile(double p, double dof) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("quantile level must be in (0,1)");
  if (!(dof > 0.0)) throw InvalidArgument("t dof must be positive");
  return boost::math::quantile(boost::math::students_t_distribution<double>(dof), p);
}

/// Central interval holding mass alpha.
inline std::pair<double, double> student_t_interval(const StudentT3& dist, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must be in (0,1)");
  const double half = student_t_quantile(0.5 * (1.0 + alpha), dist.dof) * std::sqrt(dist.scale_sq);
  return {dist.location - half, dist.location + half};
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Inverse standard normal CDF: Acklam's rational approximation followed by
/// one Halley step against erfc.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("quantile level must be in (0,1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

/// How a target credible-interval width W relates to the posterior sd:
/// Full means W is the whole central interval (2q sd), Half means W = q sd.
enum class WidthConvention { Full, Half };

inline double normal_two_tailed_multiplier(double alpha, WidthConvention convention) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must be in (0,1)");
  const double q = normal_quantile(0.5 * (1.0 + alpha));
  return convention == WidthConvention::Full ? 2.0 * q : q;
}

}  // namespace credexp
