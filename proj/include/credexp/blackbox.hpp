#pragma once

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "credexp/errors.hpp"
#include "credexp/interpretable_space.hpp"

namespace credexp {

inline double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_input(std::span<const double> x, std::uint64_t seed) {
  std::uint64_t h = splitmix64(seed ^ 0x5851f42d4c957f2dULL);
  for (double v : x) {
    if (v == 0.0) v = 0.0;  // fold -0.0
    h = splitmix64(h ^ std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

/// Standard normal that is a pure function of (x, seed).
inline double hashed_normal(std::span<const double> x, std::uint64_t seed) {
  const std::uint64_t h1 = hash_input(x, seed);
  const std::uint64_t h2 = splitmix64(h1);
  const double u1 = (static_cast<double>(h1 >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = static_cast<double>(h2 >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace detail

/// Gaussian noise that is a pure function of the input. The standard deviation
/// at x is sqrt(sd^2 + sum_j (scales_j * x_j)^2), so per-feature scales make
/// the noise grow with the features that are present. Logit models add it to
/// the logit, the clamped linear model to the probability.
struct HashedNoise {
  double sd = 0.0;
  std::vector<double> scales;
  std::uint64_t seed = 0;

  bool enabled() const noexcept {
    return sd > 0.0 || std::any_of(scales.begin(), scales.end(), [](double s) { return s != 0.0; });
  }
  void validate(std::size_t dim) const {
    if (!(sd >= 0.0) || !std::isfinite(sd)) throw InvalidArgument("noise sd must be >= 0");
    if (!scales.empty() && scales.size() != dim)
      throw InvalidArgument("noise scale count does not match input dimension");
    for (double s : scales)
      if (!(s >= 0.0) || !std::isfinite(s)) throw InvalidArgument("noise scales must be >= 0");
  }
  double stddev_at(std::span<const double> x) const {
    double v = sd * sd;
    for (std::size_t j = 0; j < scales.size(); ++j) v += scales[j] * scales[j] * x[j] * x[j];
    return std::sqrt(v);
  }
  double perturb(std::span<const double> x, double value) const {
    if (!enabled()) return value;
    return value + stddev_at(x) * detail::hashed_normal(x, seed);
  }
};

/// A probability-valued function of the original feature space with query
/// accounting. Outputs are clamped to [0,1]; clamps are counted.
class BlackBoxModel {
 public:
  virtual ~BlackBoxModel() = default;

  virtual std::size_t input_dim() const = 0;
  virtual std::string describe() const = 0;
  virtual bool concurrent_safe() const { return true; }

  double evaluate(std::span<const double> x) const {
    if (x.size() != input_dim())
      throw InvalidArgument("model expects " + std::to_string(input_dim()) + " inputs, got " +
                            std::to_string(x.size()));
    queries_.fetch_add(1, std::memory_order_relaxed);
    const double p = predict(x);
    if (!std::isfinite(p))
      throw ModelFault("model returned a non-finite value", std::vector<double>(x.begin(), x.end()));
    if (p < 0.0 || p > 1.0) {
      clamps_.fetch_add(1, std::memory_order_relaxed);
      return std::clamp(p, 0.0, 1.0);
    }
    return p;
  }

  std::vector<double> query(const std::vector<std::vector<double>>& batch) const {
    std::vector<double> out;
    out.reserve(batch.size());
    for (const auto& x : batch) out.push_back(evaluate(x));
    return out;
  }

  std::size_t query_count() const noexcept { return queries_.load(std::memory_order_relaxed); }
  std::size_t clamp_events() const noexcept { return clamps_.load(std::memory_order_relaxed); }
  void reset_counters() noexcept {
    queries_.store(0);
    clamps_.store(0);
  }

 protected:
  virtual double predict(std::span<const double> x) const = 0;

 private:
  mutable std::atomic<std::size_t> queries_{0};
  mutable std::atomic<std::size_t> clamps_{0};
};

/// sigmoid(b + beta'x [+ noise]).
class LinearLogit final : public BlackBoxModel {
 public:
  LinearLogit(std::vector<double> beta, double intercept, HashedNoise noise = {})
      : beta_(std::move(beta)), b_(intercept), noise_(std::move(noise)) {
    if (beta_.empty()) throw InvalidArgument("linear logit needs at least one coefficient");
    noise_.validate(beta_.size());
  }
  std::size_t input_dim() const override { return beta_.size(); }
  std::string describe() const override { return "linear_logit(d=" + std::to_string(beta_.size()) + ")"; }
  const std::vector<double>& coefficients() const noexcept { return beta_; }

 protected:
  double predict(std::span<const double> x) const override {
    double t = b_;
    for (std::size_t j = 0; j < beta_.size(); ++j) t += beta_[j] * x[j];
    return sigmoid(noise_.perturb(x, t));
  }

 private:
  std::vector<double> beta_;
  double b_;
  HashedNoise noise_;
};

/// Linear probability b + beta'x [+ noise] clamped to [0,1].
class SparseLinear final : public BlackBoxModel {
 public:
  SparseLinear(std::vector<double> beta, double intercept, HashedNoise noise = {})
      : beta_(std::move(beta)), b_(intercept), noise_(std::move(noise)) {
    if (beta_.empty()) throw InvalidArgument("sparse linear needs at least one coefficient");
    noise_.validate(beta_.size());
  }
  std::size_t input_dim() const override { return beta_.size(); }
  std::string describe() const override { return "sparse_linear(d=" + std::to_string(beta_.size()) + ")"; }

 protected:
  double predict(std::span<const double> x) const override {
    double p = b_;
    for (std::size_t j = 0; j < beta_.size(); ++j) p += beta_[j] * x[j];
    return noise_.perturb(x, p);
  }

 private:
  std::vector<double> beta_;
  double b_;
  HashedNoise noise_;
};

/// sigmoid(b + beta'x + w * x_i * x_j [+ noise]): a logit with one XOR-like
/// interaction.
class XorNonlinear final : public BlackBoxModel {
 public:
  XorNonlinear(std::vector<double> beta, double intercept, std::size_t i, std::size_t j, double weight,
               HashedNoise noise = {})
      : beta_(std::move(beta)), b_(intercept), i_(i), j_(j), w_(weight), noise_(std::move(noise)) {
    if (beta_.empty()) throw InvalidArgument("xor model needs at least one coefficient");
    if (i_ >= beta_.size() || j_ >= beta_.size() || i_ == j_)
      throw InvalidArgument("xor interaction indices are invalid");
    noise_.validate(beta_.size());
  }
  std::size_t input_dim() const override { return beta_.size(); }
  std::string describe() const override { return "xor_nonlinear(d=" + std::to_string(beta_.size()) + ")"; }

 protected:
  double predict(std::span<const double> x) const override {
    double t = b_ + w_ * x[i_] * x[j_];
    for (std::size_t k = 0; k < beta_.size(); ++k) t += beta_[k] * x[k];
    return sigmoid(noise_.perturb(x, t));
  }

 private:
  std::vector<double> beta_;
  double b_;
  std::size_t i_, j_;
  double w_;
  HashedNoise noise_;
};

/// Binary decision tree node: internal nodes route x[feature] < threshold to
/// `left`, everything else to `right`.
struct TreeNode {
  bool is_leaf = true;
  double value = 0.0;
  std::size_t feature = 0;
  double threshold = 0.0;
  std::unique_ptr<TreeNode> left, right;

  double eval(std::span<const double> x) const {
    const TreeNode* n = this;
    while (!n->is_leaf) n = x[n->feature] < n->threshold ? n->left.get() : n->right.get();
    return n->value;
  }
  std::size_t max_feature() const {
    if (is_leaf) return 0;
    return std::max({feature, left->max_feature(), right->max_feature()});
  }
};

/// Mean of leaf values over trees.
class TreeEnsemble final : public BlackBoxModel {
 public:
  TreeEnsemble(std::vector<std::unique_ptr<TreeNode>> trees, std::size_t input_dim)
      : trees_(std::move(trees)), dim_(input_dim) {
    if (trees_.empty()) throw InvalidArgument("tree ensemble has no trees");
    for (const auto& t : trees_)
      if (t->max_feature() >= dim_) throw InvalidArgument("tree references a feature beyond input_dim");
  }
  std::size_t input_dim() const override { return dim_; }
  std::string describe() const override {
    return "tree_ensemble(trees=" + std::to_string(trees_.size()) + ")";
  }
  std::size_t tree_count() const noexcept { return trees_.size(); }

 protected:
  double predict(std::span<const double> x) const override {
    double s = 0.0;
    for (const auto& t : trees_) s += t->eval(x);
    return s / static_cast<double>(trees_.size());
  }

 private:
  std::vector<std::unique_ptr<TreeNode>> trees_;
  std::size_t dim_;
};

enum class SurfaceId { Linear, Nonlinear };

inline double toy_surface_raw(SurfaceId id, double x1, double x2) {
  if (id == SurfaceId::Linear) return x1;
  return std::sin(x1 / 2.0) * 10.0 + std::cos(10.0 + x1 * x2 / 2.0) * std::cos(x1);
}

/// Minimum and maximum of the raw surface over [-10,10]^2 by grid scan.
inline std::pair<double, double> toy_surface_bounds(SurfaceId id, std::size_t grid = 2001) {
  if (id == SurfaceId::Linear) return {-10.0, 10.0};
  double lo = INFINITY, hi = -INFINITY;
  const double step = 20.0 / static_cast<double>(grid - 1);
  for (std::size_t a = 0; a < grid; ++a)
    for (std::size_t b = 0; b < grid; ++b) {
      const double v = toy_surface_raw(id, -10.0 + step * static_cast<double>(a),
                                       -10.0 + step * static_cast<double>(b));
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  return {lo, hi};
}

/// Two-dimensional toy surface, min-max normalized over [-10,10]^2. Optional
/// logit noise is applied to the normalized probability.
class ToySurface final : public BlackBoxModel {
 public:
  explicit ToySurface(SurfaceId id, HashedNoise noise = {}) : id_(id), noise_(std::move(noise)) {
    noise_.validate(2);
    static const auto linear = toy_surface_bounds(SurfaceId::Linear);
    static const auto nonlinear = toy_surface_bounds(SurfaceId::Nonlinear);
    std::tie(lo_, hi_) = id == SurfaceId::Linear ? linear : nonlinear;
  }
  std::size_t input_dim() const override { return 2; }
  std::string describe() const override {
    return std::string("toy_surface(") + (id_ == SurfaceId::Linear ? "linear" : "nonlinear") + ")";
  }
  double lower_bound() const noexcept { return lo_; }
  double upper_bound() const noexcept { return hi_; }

 protected:
  double predict(std::span<const double> x) const override {
    const double p = (toy_surface_raw(id_, x[0], x[1]) - lo_) / (hi_ - lo_);
    if (!noise_.enabled()) return p;
    const double q = std::clamp(p, 1e-6, 1.0 - 1e-6);
    return sigmoid(noise_.perturb(x, std::log(q / (1.0 - q))));
  }

 private:
  SurfaceId id_;
  HashedNoise noise_;
  double lo_ = 0.0, hi_ = 1.0;
};

/// Labels perturbations of one instance, caching by mask so duplicates are
/// queried once.
class PerturbationLabeler {
 public:
  PerturbationLabeler(const InstanceContext& ctx, const BlackBoxModel& model)
      : ctx_(ctx), model_(model) {
    if (ctx.original_dim() != model.input_dim())
      throw InvalidArgument("instance width " + std::to_string(ctx.original_dim()) +
                            " does not match model input " + std::to_string(model.input_dim()));
  }

  double label(const BinaryPerturbation& z) {
    std::lock_guard lock(mu_);
    ++requests_;
    if (auto it = cache_.find(z.to_string()); it != cache_.end()) {
      ++hits_;
      return it->second;
    }
    const double y = model_.evaluate(to_original_space(ctx_, z));
    cache_.emplace(z.to_string(), y);
    return y;
  }

  std::vector<double> label(std::span<const BinaryPerturbation> zs) {
    std::vector<double> out;
    out.reserve(zs.size());
    for (const auto& z : zs) out.push_back(label(z));
    return out;
  }

  std::size_t requests() const noexcept { return requests_; }
  std::size_t hits() const noexcept { return hits_; }
  std::size_t misses() const noexcept { return requests_ - hits_; }
  const InstanceContext& context() const noexcept { return ctx_; }
  const BlackBoxModel& model() const noexcept { return model_; }

 private:
  const InstanceContext& ctx_;
  const BlackBoxModel& model_;
  std::mutex mu_;
  std::map<std::string, double> cache_;
  std::size_t requests_ = 0;
  std::size_t hits_ = 0;
};

namespace detail {

inline std::size_t line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

inline nlohmann::json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t line = e.byte > 0 ? line_of_offset(text, e.byte - 1) : 0;
    throw ParseError(source, line, "", "malformed JSON");
  }
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Schema helpers that report the JSON pointer of the offending field.
struct JsonReader {
  std::string source;

  [[noreturn]] void fail(const std::string& path, const std::string& msg) const {
    throw ParseError(source, 0, path, msg);
  }
  const nlohmann::json& member(const nlohmann::json& obj, const std::string& path,
                               const std::string& key) const {
    if (!obj.is_object()) fail(path, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) fail(path + "/" + key, "missing field");
    return *it;
  }
  double number(const nlohmann::json& v, const std::string& path) const {
    if (!v.is_number()) fail(path, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(path, "expected a finite number");
    return d;
  }
  std::size_t index(const nlohmann::json& v, const std::string& path) const {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      fail(path, "expected a non-negative integer");
    return v.get<std::size_t>();
  }
  std::vector<double> numbers(const nlohmann::json& v, const std::string& path) const {
    if (!v.is_array()) fail(path, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(number(v[i], path + "/" + std::to_string(i)));
    return out;
  }
  double number_or(const nlohmann::json& obj, const std::string& path, const std::string& key,
                   double fallback) const {
    auto it = obj.find(key);
    return it == obj.end() ? fallback : number(*it, path + "/" + key);
  }
};

inline std::unique_ptr<TreeNode> parse_tree_node(const JsonReader& r, const nlohmann::json& j,
                                                 const std::string& path, int depth) {
  if (depth > 64) r.fail(path, "tree deeper than 64 levels");
  if (!j.is_object()) r.fail(path, "expected a node object");
  auto node = std::make_unique<TreeNode>();
  if (j.contains("leaf")) {
    node->value = r.number(j["leaf"], path + "/leaf");
    return node;
  }
  node->is_leaf = false;
  node->feature = r.index(r.member(j, path, "feature"), path + "/feature");
  node->threshold = r.number(r.member(j, path, "threshold"), path + "/threshold");
  node->left = parse_tree_node(r, r.member(j, path, "left"), path + "/left", depth + 1);
  node->right = parse_tree_node(r, r.member(j, path, "right"), path + "/right", depth + 1);
  return node;
}

inline HashedNoise parse_noise(const JsonReader& r, const nlohmann::json& j) {
  HashedNoise n;
  n.sd = r.number_or(j, "", "noise_sd", 0.0);
  if (j.contains("noise_scales")) n.scales = r.numbers(j["noise_scales"], "/noise_scales");
  if (j.contains("noise_seed")) n.seed = r.index(j["noise_seed"], "/noise_seed");
  return n;
}

}  // namespace detail

/// Tree ensemble from a JSON document:
///   {"input_dim": 3, "trees": [{"feature": 0, "threshold": 0.5,
///                               "left": {"leaf": 0.2}, "right": {"leaf": 0.8}}]}
inline std::unique_ptr<TreeEnsemble> parse_tree_ensemble(const nlohmann::json& j, const std::string& source) {
  const detail::JsonReader r{source};
  const auto& trees = r.member(j, "", "trees");
  if (!trees.is_array()) r.fail("/trees", "expected an array");
  if (trees.empty()) r.fail("/trees", "tree ensemble has no trees");
  std::vector<std::unique_ptr<TreeNode>> nodes;
  for (std::size_t t = 0; t < trees.size(); ++t)
    nodes.push_back(detail::parse_tree_node(r, trees[t], "/trees/" + std::to_string(t), 0));
  std::size_t dim = 0;
  if (j.contains("input_dim")) {
    dim = r.index(j["input_dim"], "/input_dim");
  } else {
    for (const auto& n : nodes) dim = std::max(dim, n->max_feature() + 1);
  }
  try {
    return std::make_unique<TreeEnsemble>(std::move(nodes), dim);
  } catch (const InvalidArgument& e) {
    r.fail("/trees", e.what());
  }
}

inline std::unique_ptr<TreeEnsemble> load_tree_ensemble(const std::filesystem::path& path) {
  const std::string text = detail::read_text_file(path);
  return parse_tree_ensemble(detail::parse_json_text(text, path.string()), path.string());
}

/// Builds a model from a JSON spec. `kind` selects the model:
///   linear_logit   {coefficients, intercept, noise_sd?, noise_scales?, noise_seed?}
///   sparse_linear  {coefficients, intercept, noise...}
///   xor_nonlinear  {coefficients, intercept, interaction: [i, j], interaction_weight, noise...}
///   tree_ensemble  {path} relative to the spec file, or inline {trees, input_dim?}
///   toy_surface    {surface: "linear" | "nonlinear", noise...}
inline std::unique_ptr<BlackBoxModel> model_from_json(const nlohmann::json& j, const std::string& source,
                                                      const std::filesystem::path& base_dir = {}) {
  const detail::JsonReader r{source};
  const auto& kind_v = r.member(j, "", "kind");
  if (!kind_v.is_string()) r.fail("/kind", "expected a string");
  const std::string kind = kind_v.get<std::string>();
  try {
    if (kind == "linear_logit")
      return std::make_unique<LinearLogit>(r.numbers(r.member(j, "", "coefficients"), "/coefficients"),
                                           r.number_or(j, "", "intercept", 0.0), detail::parse_noise(r, j));
    if (kind == "sparse_linear")
      return std::make_unique<SparseLinear>(r.numbers(r.member(j, "", "coefficients"), "/coefficients"),
                                            r.number_or(j, "", "intercept", 0.0), detail::parse_noise(r, j));
    if (kind == "xor_nonlinear") {
      const auto& pair = r.member(j, "", "interaction");
      if (!pair.is_array() || pair.size() != 2) r.fail("/interaction", "expected [i, j]");
      return std::make_unique<XorNonlinear>(
          r.numbers(r.member(j, "", "coefficients"), "/coefficients"), r.number_or(j, "", "intercept", 0.0),
          r.index(pair[0], "/interaction/0"), r.index(pair[1], "/interaction/1"),
          r.number(r.member(j, "", "interaction_weight"), "/interaction_weight"), detail::parse_noise(r, j));
    }
    if (kind == "tree_ensemble") {
      if (j.contains("path")) {
        if (!j["path"].is_string()) r.fail("/path", "expected a string");
        std::filesystem::path p = j["path"].get<std::string>();
        if (p.is_relative()) p = base_dir / p;
        return load_tree_ensemble(p);
      }
      return parse_tree_ensemble(j, source);
    }
    if (kind == "toy_surface") {
      const auto& s = r.member(j, "", "surface");
      if (s == "linear") return std::make_unique<ToySurface>(SurfaceId::Linear, detail::parse_noise(r, j));
      if (s == "nonlinear") return std::make_unique<ToySurface>(SurfaceId::Nonlinear, detail::parse_noise(r, j));
      r.fail("/surface", "expected \"linear\" or \"nonlinear\"");
    }
  } catch (const InvalidArgument& e) {
    r.fail("", e.what());
  }
  r.fail("/kind", "unknown model kind '" + kind + "'");
}

inline std::unique_ptr<BlackBoxModel> load_model(const std::filesystem::path& path) {
  const std::string text = detail::read_text_file(path);
  return model_from_json(detail::parse_json_text(text, path.string()), path.string(), path.parent_path());
}

}  // namespace credexp
