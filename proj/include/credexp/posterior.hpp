#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "credexp/distributions.hpp"
#include "credexp/errors.hpp"
#include "credexp/interpretable_space.hpp"

namespace credexp {

/// Conjugate prior on sigma^2: Inv-chi2(n0, sigma0_sq). Defaults are the
/// uninformative setting.
struct PriorConfig {
  double n0 = 1e-6;
  double sigma0_sq = 1e-6;

  void validate() const {
    if (!(n0 >= 0.0) || !std::isfinite(n0)) throw InvalidArgument("prior n0 must be >= 0");
    if (!(sigma0_sq > 0.0) || !std::isfinite(sigma0_sq))
      throw InvalidArgument("prior sigma0^2 must be > 0");
  }
};

/// Rows with at least this weight on the empty or full coalition count as
/// Shapley clamp rows.
inline constexpr double kClampRowThreshold = 1e4;

/// Running Z'PiZ, Z'PiY and Y'PiY over a weighted design. Labels are centred
/// by `label_offset` as they are added.
class SufficientStats {
 public:
  SufficientStats(std::size_t features, bool intercept, double label_offset = 0.0)
      : intercept_(intercept), label_offset_(label_offset) {
    const auto p = static_cast<Eigen::Index>(features + (intercept ? 1 : 0));
    A_ = Eigen::MatrixXd::Zero(p, p);
    b_ = Eigen::VectorXd::Zero(p);
  }

  explicit SufficientStats(const PerturbationSet& set)
      : SufficientStats(set.feature_count(), set.intercept, set.label_offset) {
    add(set);
  }

  void add(const Eigen::Ref<const Eigen::VectorXd>& row, double pi, double y) {
    if (row.size() != A_.rows()) throw InvalidArgument("design row width mismatch");
    if (!std::isfinite(pi) || pi < 0.0) throw InvalidArgument("proximity weight is invalid");
    if (!std::isfinite(y) || y < 0.0 || y > 1.0) throw InvalidArgument("label outside [0,1]");
    const double yc = y - label_offset_;
    A_.selfadjointView<Eigen::Lower>().rankUpdate(row, pi);
    b_.noalias() += (pi * yc) * row;
    yy_ += pi * yc * yc;
    pi_sum_ += pi;
    ++n_;
    if (pi >= kClampRowThreshold) {
      const Eigen::Index off = intercept_ ? 1 : 0;
      const auto bits = row.tail(row.size() - off);
      if (bits.isZero(0.0)) clamp_empty_ = true;
      if (bits.isOnes(0.0)) clamp_full_ = true;
    }
  }

  void add(const PerturbationSet& set) {
    set.validate();
    if (set.intercept != intercept_ || set.label_offset != label_offset_)
      throw InvalidArgument("perturbation set layout does not match accumulated statistics");
    for (Eigen::Index i = 0; i < set.Z.rows(); ++i)
      add(set.Z.row(i).transpose(), set.Pi[i], set.Y[i]);
  }

  void add(const BinaryPerturbation& z, double pi, double y) { add(z.design_row(intercept_), pi, y); }

  /// Z'PiZ (full symmetric copy).
  Eigen::MatrixXd A() const { return A_.selfadjointView<Eigen::Lower>(); }
  const Eigen::VectorXd& b() const noexcept { return b_; }
  double yy() const noexcept { return yy_; }
  std::size_t N() const noexcept { return n_; }
  double pi_sum() const noexcept { return pi_sum_; }
  bool intercept() const noexcept { return intercept_; }
  double label_offset() const noexcept { return label_offset_; }
  bool has_clamp_rows() const noexcept { return clamp_empty_ && clamp_full_; }
  std::size_t parameter_count() const noexcept { return static_cast<std::size_t>(b_.size()); }

 private:
  bool intercept_;
  double label_offset_;
  Eigen::MatrixXd A_;  // lower triangle holds the data
  Eigen::VectorXd b_;
  double yy_ = 0.0;
  double pi_sum_ = 0.0;
  std::size_t n_ = 0;
  bool clamp_empty_ = false;
  bool clamp_full_ = false;
};

struct FeatureInterval {
  double low = 0.0;
  double high = 0.0;
  double width() const noexcept { return high - low; }
  bool contains(double v) const noexcept { return low <= v && v <= high; }
};

/// Fitted posterior over the surrogate coefficients.
///
/// Coefficient vectors include the intercept at index 0 when `intercept` is
/// set; the per-feature accessors skip it.
struct PosteriorExplanation {
  Eigen::VectorXd phi_hat;
  Eigen::MatrixXd V_phi;
  double s_sq = 0.0;
  double nu = 0.0;
  double tau_sq = 0.0;  // scale of the sigma^2 posterior
  double alpha = 0.95;
  std::vector<FeatureInterval> intervals;  // one per coefficient
  double error_density_at_zero = 0.0;
  bool perfect_fit = false;
  std::size_t N = 0;
  bool intercept = false;
  double label_offset = 0.0;
  bool has_clamp_rows = false;

  std::size_t feature_count() const noexcept {
    return static_cast<std::size_t>(phi_hat.size()) - (intercept ? 1 : 0);
  }
  Eigen::Index coefficient_index(std::size_t feature) const noexcept {
    return static_cast<Eigen::Index>(feature) + (intercept ? 1 : 0);
  }
  Eigen::VectorXd feature_importances() const {
    return phi_hat.tail(static_cast<Eigen::Index>(feature_count()));
  }
  std::vector<FeatureInterval> feature_intervals() const {
    return {intervals.begin() + (intercept ? 1 : 0), intervals.end()};
  }
  /// phi_0: the intercept coefficient, or the label offset when none is fitted.
  double baseline_value() const { return intercept ? phi_hat[0] : label_offset; }

  ScaledInvChiSq sigma_posterior() const {
    if (!(tau_sq > 0.0)) throw InvalidState("sigma^2 posterior is degenerate (perfect fit)");
    return ScaledInvChiSq(nu, tau_sq);
  }

  double max_feature_width() const {
    double w = 0.0;
    for (const auto& iv : feature_intervals()) w = std::max(w, iv.width());
    return w;
  }
  double median_feature_width() const {
    std::vector<double> w;
    for (const auto& iv : feature_intervals()) w.push_back(iv.width());
    if (w.empty()) return 0.0;
    std::sort(w.begin(), w.end());
    const std::size_t m = w.size() / 2;
    return w.size() % 2 ? w[m] : 0.5 * (w[m - 1] + w[m]);
  }
};

enum class IntervalMethod { ClosedForm, MonteCarlo };

namespace detail {

inline std::vector<FeatureInterval> closed_form_intervals(const PosteriorExplanation& post,
                                                          double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must be in (0,1)");
  std::vector<FeatureInterval> out(static_cast<std::size_t>(post.phi_hat.size()));
  const double q = student_t_quantile(0.5 * (1.0 + alpha), post.nu);
  for (Eigen::Index i = 0; i < post.phi_hat.size(); ++i) {
    const double half = q * std::sqrt(std::max(0.0, post.V_phi(i, i)) * post.tau_sq);
    out[static_cast<std::size_t>(i)] = {post.phi_hat[i] - half, post.phi_hat[i] + half};
  }
  return out;
}

/// Type-7 empirical quantile of sorted data.
inline double sorted_quantile(const std::vector<double>& sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

inline double error_uncertainty(const PosteriorExplanation& post) {
  if (!(post.tau_sq > 0.0)) return std::numeric_limits<double>::infinity();
  return student_t_pdf(StudentT3(post.nu, 0.0, post.tau_sq), 0.0);
}

inline PosteriorExplanation fit(const SufficientStats& stats, const PriorConfig& prior,
                                double alpha = 0.95) {
  prior.validate();
  if (stats.N() == 0) throw InvalidArgument("cannot fit an empty design");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must be in (0,1)");
  const auto p = static_cast<Eigen::Index>(stats.parameter_count());

  PosteriorExplanation post;
  const Eigen::MatrixXd precision = stats.A() + Eigen::MatrixXd::Identity(p, p);
  const Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) throw InvalidState("posterior precision is not positive definite");
  post.V_phi = llt.solve(Eigen::MatrixXd::Identity(p, p));
  post.V_phi = 0.5 * (post.V_phi + post.V_phi.transpose());
  post.phi_hat = llt.solve(stats.b());

  const double n = static_cast<double>(stats.N());
  // (Y - Z phi)' Pi (Y - Z phi) + phi'phi == yy - phi'b at the solution.
  post.s_sq = std::max(0.0, (stats.yy() - post.phi_hat.dot(stats.b())) / n);
  post.N = stats.N();
  post.nu = prior.n0 + n;
  post.tau_sq = (prior.n0 * prior.sigma0_sq + n * post.s_sq) / post.nu;
  post.alpha = alpha;
  post.intercept = stats.intercept();
  post.label_offset = stats.label_offset();
  post.has_clamp_rows = stats.has_clamp_rows();
  post.perfect_fit = !(post.tau_sq > 0.0);
  post.intervals = detail::closed_form_intervals(post, alpha);
  post.error_density_at_zero = error_uncertainty(post);
  return post;
}

/// Batch fit. s^2 is evaluated from the residuals directly rather than the
/// expanded sufficient-statistic form.
inline PosteriorExplanation fit(const PerturbationSet& set, const PriorConfig& prior,
                                double alpha = 0.95) {
  set.validate();
  PosteriorExplanation post = fit(SufficientStats(set), prior, alpha);
  const Eigen::VectorXd resid =
      (set.Y.array() - set.label_offset).matrix() - set.Z * post.phi_hat;
  const double n = static_cast<double>(set.size());
  post.s_sq = (resid.dot(set.Pi.cwiseProduct(resid)) + post.phi_hat.squaredNorm()) / n;
  post.tau_sq = (prior.n0 * prior.sigma0_sq + n * post.s_sq) / post.nu;
  post.perfect_fit = !(post.tau_sq > 0.0);
  post.intervals = detail::closed_form_intervals(post, alpha);
  post.error_density_at_zero = error_uncertainty(post);
  return post;
}

/// Central credible intervals for every coefficient.
///
/// ClosedForm uses the Student-t marginal; MonteCarlo draws sigma^2 and then
/// phi | sigma^2 and reads off empirical quantiles.
inline std::vector<FeatureInterval> credible_intervals(const PosteriorExplanation& post,
                                                       double alpha,
                                                       IntervalMethod method = IntervalMethod::ClosedForm,
                                                       std::size_t n_draws = 10'000,
                                                       std::uint64_t seed = 0) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must be in (0,1)");
  if (method == IntervalMethod::ClosedForm) return detail::closed_form_intervals(post, alpha);
  if (n_draws < 100) throw InvalidArgument("Monte Carlo intervals need at least 100 draws");

  const auto p = post.phi_hat.size();
  if (post.perfect_fit) {
    std::vector<FeatureInterval> out;
    for (Eigen::Index i = 0; i < p; ++i) out.push_back({post.phi_hat[i], post.phi_hat[i]});
    return out;
  }
  const Eigen::LLT<Eigen::MatrixXd> chol(post.V_phi);
  const Eigen::MatrixXd L = chol.matrixL();
  const ScaledInvChiSq sigma = post.sigma_posterior();

  std::mt19937_64 engine(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> draws(static_cast<std::size_t>(p), std::vector<double>(n_draws));
  Eigen::VectorXd xi(p);
  for (std::size_t k = 0; k < n_draws; ++k) {
    const double s = std::sqrt(sigma.draw(engine));
    for (Eigen::Index i = 0; i < p; ++i) xi[i] = normal(engine);
    const Eigen::VectorXd phi = post.phi_hat + s * (L * xi);
    for (Eigen::Index i = 0; i < p; ++i) draws[static_cast<std::size_t>(i)][k] = phi[i];
  }
  std::vector<FeatureInterval> out;
  out.reserve(static_cast<std::size_t>(p));
  for (auto& col : draws) {
    std::sort(col.begin(), col.end());
    out.push_back({detail::sorted_quantile(col, 0.5 * (1.0 - alpha)),
                   detail::sorted_quantile(col, 0.5 * (1.0 + alpha))});
  }
  return out;
}

/// Variance of the posterior predictive t_N(phi'z, (z'Vz + 1) s^2).
inline double predictive_variance(const PosteriorExplanation& post,
                                  const Eigen::Ref<const Eigen::VectorXd>& row) {
  if (post.N <= 2) throw InvalidState("predictive variance needs more than 2 observations");
  if (row.size() != post.phi_hat.size()) throw InvalidArgument("design row width mismatch");
  const double n = static_cast<double>(post.N);
  return (row.dot(post.V_phi * row) + 1.0) * post.s_sq * (n / (n - 2.0));
}

inline double predictive_variance(const PosteriorExplanation& post, const BinaryPerturbation& z) {
  return predictive_variance(post, z.design_row(post.intercept));
}

/// |f(x) - (phi_0 + sum phi_i)| for a Shapley fit. phi_0 is the intercept when
/// one was fitted, otherwise f(empty coalition).
inline double shap_additivity_residual(const PosteriorExplanation& post, double f_x,
                                       double f_empty) {
  if (!post.has_clamp_rows)
    throw InvalidState("additivity needs clamp rows for the empty and full coalitions");
  const double phi0 = post.intercept ? post.phi_hat[0] : f_empty;
  return std::abs(f_x - (phi0 + post.feature_importances().sum()));
}

/// Weighted least squares with a unit ridge: the classic LIME / KernelSHAP
/// closed form. Solved with an LDLT factorization, independent of `fit`.
inline Eigen::VectorXd ridge_wls(const Eigen::MatrixXd& Z, const Eigen::VectorXd& Pi,
                                 const Eigen::VectorXd& Y) {
  if (Z.rows() != Pi.size() || Z.rows() != Y.size())
    throw InvalidArgument("design, weights and labels disagree in length");
  const Eigen::MatrixXd ZtW = Z.transpose() * Pi.asDiagonal();
  const Eigen::MatrixXd M = ZtW * Z + Eigen::MatrixXd::Identity(Z.cols(), Z.cols());
  return M.ldlt().solve(ZtW * Y);
}

}  // namespace credexp
