#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "credexp/errors.hpp"

namespace credexp {

/// One interpretable feature: a named group of original-space columns that are
/// kept or replaced together.
struct InterpretableFeature {
  std::string name;
  std::vector<std::size_t> columns;
};

/// The instance being explained together with its interpretable representation.
///
/// A bit set to 1 keeps the instance's own values for every column of that
/// feature; a 0 bit copies the baseline's values instead.
class InstanceContext {
 public:
  InstanceContext(std::vector<double> x_original, std::vector<InterpretableFeature> features,
                  std::vector<double> baseline)
      : x_(std::move(x_original)), features_(std::move(features)), baseline_(std::move(baseline)) {
    validate();
  }

  /// One interpretable feature per original column.
  static InstanceContext tabular(std::vector<double> x, std::vector<double> baseline,
                                 std::vector<std::string> names = {}) {
    if (!names.empty() && names.size() != x.size())
      throw InvalidArgument("feature name count does not match instance width");
    std::vector<InterpretableFeature> features;
    features.reserve(x.size());
    for (std::size_t j = 0; j < x.size(); ++j)
      features.push_back({names.empty() ? "x" + std::to_string(j) : names[j], {j}});
    return InstanceContext(std::move(x), std::move(features), std::move(baseline));
  }

  /// Same feature map and baseline, different point.
  InstanceContext with_point(std::vector<double> x) const {
    return InstanceContext(std::move(x), features_, baseline_);
  }

  std::size_t dim() const noexcept { return features_.size(); }
  std::size_t original_dim() const noexcept { return x_.size(); }
  const std::vector<double>& x_original() const noexcept { return x_; }
  const std::vector<double>& baseline() const noexcept { return baseline_; }
  const std::vector<InterpretableFeature>& features() const noexcept { return features_; }

  std::vector<std::string> feature_names() const {
    std::vector<std::string> out;
    out.reserve(features_.size());
    for (const auto& f : features_) out.push_back(f.name);
    return out;
  }

 private:
  void validate() const {
    if (features_.empty()) throw InvalidArgument("instance context needs at least one feature");
    if (baseline_.size() != x_.size())
      throw InvalidArgument("baseline length " + std::to_string(baseline_.size()) +
                            " does not match instance length " + std::to_string(x_.size()));
    std::vector<bool> claimed(x_.size(), false);
    for (const auto& f : features_) {
      if (f.columns.empty())
        throw InvalidArgument("interpretable feature '" + f.name + "' maps to no column");
      for (std::size_t c : f.columns) {
        if (c >= x_.size())
          throw InvalidArgument("feature '" + f.name + "' references column " +
                                std::to_string(c) + " out of range");
        if (claimed[c])
          throw InvalidArgument("column " + std::to_string(c) + " claimed by two features");
        claimed[c] = true;
      }
    }
  }

  std::vector<double> x_;
  std::vector<InterpretableFeature> features_;
  std::vector<double> baseline_;
};

/// Presence mask over the interpretable features.
class BinaryPerturbation {
 public:
  BinaryPerturbation() = default;
  explicit BinaryPerturbation(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
    for (auto b : bits_)
      if (b > 1) throw InvalidArgument("perturbation bits must be 0 or 1");
  }

  static BinaryPerturbation all_ones(std::size_t d) {
    return BinaryPerturbation(std::vector<std::uint8_t>(d, 1));
  }
  static BinaryPerturbation all_zeros(std::size_t d) {
    return BinaryPerturbation(std::vector<std::uint8_t>(d, 0));
  }

  /// Parses a "0101" string as written in CSV dumps.
  static BinaryPerturbation from_string(std::string_view s) {
    std::vector<std::uint8_t> bits;
    bits.reserve(s.size());
    for (char c : s) {
      if (c != '0' && c != '1') throw InvalidArgument("perturbation string must be 0/1 only");
      bits.push_back(static_cast<std::uint8_t>(c - '0'));
    }
    return BinaryPerturbation(std::move(bits));
  }

  std::string to_string() const {
    std::string out;
    out.reserve(bits_.size());
    for (auto b : bits_) out.push_back(static_cast<char>('0' + b));
    return out;
  }

  std::size_t size() const noexcept { return bits_.size(); }
  std::uint8_t operator[](std::size_t i) const { return bits_[i]; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }

  /// Design-matrix row, optionally with a leading constant-1 intercept entry.
  Eigen::VectorXd design_row(bool intercept) const {
    const Eigen::Index off = intercept ? 1 : 0;
    Eigen::VectorXd row(static_cast<Eigen::Index>(bits_.size()) + off);
    if (intercept) row[0] = 1.0;
    for (std::size_t i = 0; i < bits_.size(); ++i)
      row[static_cast<Eigen::Index>(i) + off] = bits_[i];
    return row;
  }

  auto operator<=>(const BinaryPerturbation&) const = default;

 private:
  std::vector<std::uint8_t> bits_;
};

/// Number of present features, |z|.
inline std::size_t coalition_size(const BinaryPerturbation& z) {
  return static_cast<std::size_t>(std::count(z.bits().begin(), z.bits().end(), std::uint8_t{1}));
}

inline std::vector<double> to_original_space(const InstanceContext& ctx,
                                             const BinaryPerturbation& z) {
  if (z.size() != ctx.dim())
    throw InvalidArgument("perturbation has " + std::to_string(z.size()) +
                          " bits, instance has " + std::to_string(ctx.dim()) + " features");
  std::vector<double> out = ctx.baseline();
  for (std::size_t i = 0; i < ctx.dim(); ++i)
    if (z[i] == 1)
      for (std::size_t c : ctx.features()[i].columns) out[c] = ctx.x_original()[c];
  return out;
}

/// Draws one Bernoulli(0.5) mask from raw engine words so the stream is
/// identical across standard libraries.
template <class Engine>
BinaryPerturbation draw_perturbation(std::size_t d, Engine& engine) {
  std::vector<std::uint8_t> bits(d);
  std::uint64_t word = 0;
  for (std::size_t i = 0; i < d; ++i) {
    if (i % 64 == 0) word = static_cast<std::uint64_t>(engine());
    bits[i] = static_cast<std::uint8_t>(word & 1U);
    word >>= 1;
  }
  return BinaryPerturbation(std::move(bits));
}

template <class Engine>
std::vector<BinaryPerturbation> draw_perturbations(std::size_t d, std::size_t n, Engine& engine) {
  std::vector<BinaryPerturbation> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) out.push_back(draw_perturbation(d, engine));
  return out;
}

inline std::vector<BinaryPerturbation> sample_perturbations(const InstanceContext& ctx,
                                                            std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("sample_perturbations: n must be at least 1");
  std::mt19937_64 engine(seed);
  return draw_perturbations(ctx.dim(), n, engine);
}

/// Weighted, labelled design: the input to a posterior fit.
///
/// `label_offset` is subtracted from every label before fitting; it carries
/// f(empty coalition) for Shapley fits without an intercept column.
struct PerturbationSet {
  Eigen::MatrixXd Z;
  Eigen::VectorXd Pi;
  Eigen::VectorXd Y;
  bool intercept = false;
  double label_offset = 0.0;

  std::size_t size() const noexcept { return static_cast<std::size_t>(Z.rows()); }
  std::size_t feature_count() const noexcept {
    return static_cast<std::size_t>(Z.cols()) - (intercept ? 1 : 0);
  }

  void validate() const {
    if (Z.rows() < 1) throw InvalidArgument("perturbation set is empty");
    if (Pi.size() != Z.rows() || Y.size() != Z.rows())
      throw InvalidArgument("perturbation set rows are inconsistent");
    for (Eigen::Index i = 0; i < Pi.size(); ++i) {
      if (!std::isfinite(Pi[i]) || Pi[i] < 0.0)
        throw InvalidArgument("proximity weight at row " + std::to_string(i) +
                              " is negative or non-finite");
      if (!std::isfinite(Y[i]) || Y[i] < 0.0 || Y[i] > 1.0)
        throw InvalidArgument("label at row " + std::to_string(i) + " is outside [0,1]");
    }
    if (!std::isfinite(label_offset)) throw InvalidArgument("label offset is non-finite");
  }

  /// Builds a set from masks, weights and labels.
  static PerturbationSet from_rows(std::span<const BinaryPerturbation> rows,
                                   std::span<const double> weights, std::span<const double> labels,
                                   bool intercept, double label_offset = 0.0) {
    if (rows.empty()) throw InvalidArgument("perturbation set is empty");
    if (weights.size() != rows.size() || labels.size() != rows.size())
      throw InvalidArgument("perturbation set rows are inconsistent");
    const std::size_t d = rows.front().size();
    PerturbationSet set;
    set.intercept = intercept;
    set.label_offset = label_offset;
    const auto n = static_cast<Eigen::Index>(rows.size());
    set.Z.resize(n, static_cast<Eigen::Index>(d) + (intercept ? 1 : 0));
    set.Pi.resize(n);
    set.Y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& z = rows[static_cast<std::size_t>(i)];
      if (z.size() != d) throw InvalidArgument("perturbations differ in width");
      set.Z.row(i) = z.design_row(intercept).transpose();
      set.Pi[i] = weights[static_cast<std::size_t>(i)];
      set.Y[i] = labels[static_cast<std::size_t>(i)];
    }
    set.validate();
    return set;
  }
};

}  // namespace credexp
