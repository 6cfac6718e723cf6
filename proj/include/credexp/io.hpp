#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "credexp/blackbox.hpp"
#include "credexp/errors.hpp"
#include "credexp/interpretable_space.hpp"
#include "credexp/posterior.hpp"

namespace credexp {

/// Shortest round-tripping decimal form; "nan" and "inf" spelled out.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int prec = 6; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

/// Ordered key/value pairs written as "# key=value" lines ahead of CSV data.
using Provenance = std::vector<std::pair<std::string, std::string>>;

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const Provenance& provenance, const std::vector<std::string>& header)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc), columns_(header.size()) {
    if (!out_) throw IoError("cannot write " + path.string());
    for (const auto& [k, v] : provenance) out_ << "# " << k << "=" << v << "\n";
    write_row(header);
  }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_) throw InvalidArgument("CSV row width does not match header");
    write_row(cells);
  }

  void close() {
    out_.close();
    if (!out_) throw IoError("failed writing " + path_.string());
  }

 private:
  void write_row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      const bool quote = cells[i].find_first_of(",\"\n") != std::string::npos;
      if (!quote) {
        out_ << cells[i];
        continue;
      }
      out_ << '"';
      for (char c : cells[i]) out_ << (c == '"' ? "\"\"" : std::string(1, c));
      out_ << '"';
    }
    out_ << '\n';
    if (!out_) throw IoError("failed writing " + path_.string());
  }

  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t columns_;
};

/// Numeric table with a header row.
struct Dataset {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t width() const noexcept { return columns.size(); }

  std::vector<double> means() const {
    std::vector<double> m(width(), 0.0);
    for (const auto& r : rows)
      for (std::size_t j = 0; j < width(); ++j) m[j] += r[j];
    for (double& v : m) v /= static_cast<double>(std::max<std::size_t>(1, rows.size()));
    return m;
  }
  std::vector<double> mins() const {
    std::vector<double> m(width(), INFINITY);
    for (const auto& r : rows)
      for (std::size_t j = 0; j < width(); ++j) m[j] = std::min(m[j], r[j]);
    return m;
  }
  std::vector<double> maxs() const {
    std::vector<double> m(width(), -INFINITY);
    for (const auto& r : rows)
      for (std::size_t j = 0; j < width(); ++j) m[j] = std::max(m[j], r[j]);
    return m;
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  out.push_back(cell);
  return out;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Header row then numeric rows; blank lines and lines starting with '#' are
/// skipped.
inline Dataset parse_dataset(std::istream& in, const std::string& source) {
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty() || line[0] == '#') continue;
    auto cells = detail::split_csv_line(line);
    if (!have_header) {
      for (auto& c : cells) ds.columns.push_back(detail::trim(c));
      have_header = true;
      continue;
    }
    if (cells.size() != ds.columns.size())
      throw ParseError(source, lineno, "", "expected " + std::to_string(ds.columns.size()) + " fields, found " +
                                               std::to_string(cells.size()));
    std::vector<double> row;
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const std::string cell = detail::trim(cells[j]);
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (cell.empty() || used != cell.size() || !std::isfinite(v))
        throw ParseError(source, lineno, ds.columns[j], "not a finite number: '" + cell + "'");
      row.push_back(v);
    }
    ds.rows.push_back(std::move(row));
  }
  if (!have_header) throw ParseError(source, 0, "", "missing header row");
  if (ds.rows.empty()) throw ParseError(source, 0, "", "no data rows");
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_dataset(in, path.string());
}

/// Instance description in JSON:
///   {"instance": [..] | "row": k,
///    "baseline": "zeros" | "means" | [..],
///    "features": [{"name": "...", "columns": [..]}, ...]}
/// `row` and `means` need a dataset. Without "features" every column is its
/// own interpretable feature, named after the dataset header when present.
inline InstanceContext instance_from_json(const nlohmann::json& j, const std::string& source,
                                          const Dataset* data = nullptr) {
  const detail::JsonReader r{source};
  std::vector<double> x;
  if (j.contains("instance")) {
    x = r.numbers(j["instance"], "/instance");
  } else if (j.contains("row")) {
    if (!data) r.fail("/row", "a row index needs a dataset");
    const std::size_t k = r.index(j["row"], "/row");
    if (k >= data->rows.size()) r.fail("/row", "row index out of range");
    x = data->rows[k];
  } else {
    r.fail("/instance", "missing field (or /row)");
  }
  std::vector<double> baseline(x.size(), 0.0);
  if (j.contains("baseline")) {
    const auto& b = j["baseline"];
    if (b.is_string()) {
      const auto policy = b.get<std::string>();
      if (policy == "means") {
        if (!data) r.fail("/baseline", "\"means\" needs a dataset");
        baseline = data->means();
      } else if (policy != "zeros") {
        r.fail("/baseline", "expected \"zeros\", \"means\" or an array");
      }
    } else {
      baseline = r.numbers(b, "/baseline");
    }
  } else if (data) {
    baseline = data->means();
  }
  try {
    if (!j.contains("features")) {
      std::vector<std::string> names;
      if (data && data->width() == x.size()) names = data->columns;
      return InstanceContext::tabular(std::move(x), std::move(baseline), std::move(names));
    }
    const auto& fs = j["features"];
    if (!fs.is_array()) r.fail("/features", "expected an array");
    std::vector<InterpretableFeature> features;
    for (std::size_t i = 0; i < fs.size(); ++i) {
      const std::string path = "/features/" + std::to_string(i);
      InterpretableFeature f;
      const auto& name = r.member(fs[i], path, "name");
      if (!name.is_string()) r.fail(path + "/name", "expected a string");
      f.name = name.get<std::string>();
      const auto& cols = r.member(fs[i], path, "columns");
      if (!cols.is_array()) r.fail(path + "/columns", "expected an array");
      for (std::size_t c = 0; c < cols.size(); ++c)
        f.columns.push_back(r.index(cols[c], path + "/columns/" + std::to_string(c)));
      features.push_back(std::move(f));
    }
    return InstanceContext(std::move(x), std::move(features), std::move(baseline));
  } catch (const InvalidArgument& e) {
    r.fail("", e.what());
  }
}

inline InstanceContext load_instance(const std::filesystem::path& path, const Dataset* data = nullptr) {
  const std::string text = detail::read_text_file(path);
  return instance_from_json(detail::parse_json_text(text, path.string()), path.string(), data);
}

/// Serialized explanation with a fixed field order.
inline nlohmann::ordered_json explanation_document(const PosteriorExplanation& post,
                                                   const std::vector<std::string>& feature_names,
                                                   const std::string& kernel, std::uint64_t seed,
                                                   const Provenance& config = {}) {
  if (feature_names.size() != post.feature_count()) throw InvalidArgument("feature name count mismatch");
  nlohmann::ordered_json doc;
  doc["feature_names"] = feature_names;
  const auto phi = post.feature_importances();
  const auto ivs = post.feature_intervals();
  std::vector<double> p(phi.data(), phi.data() + phi.size()), lo, hi;
  for (const auto& iv : ivs) {
    lo.push_back(iv.low);
    hi.push_back(iv.high);
  }
  doc["phi_hat"] = p;
  doc["interval_low"] = lo;
  doc["interval_high"] = hi;
  doc["alpha"] = post.alpha;
  doc["s_sq"] = post.s_sq;
  doc["nu"] = post.nu;
  if (std::isfinite(post.error_density_at_zero))
    doc["error_density_at_zero"] = post.error_density_at_zero;
  else
    doc["error_density_at_zero"] = nullptr;
  doc["perfect_fit"] = post.perfect_fit;
  doc["N"] = post.N;
  doc["kernel"] = kernel;
  doc["seed"] = seed;
  if (post.intercept) {
    doc["intercept"] = {{"phi_hat", post.phi_hat[0]},
                        {"interval_low", post.intervals[0].low},
                        {"interval_high", post.intervals[0].high}};
  } else {
    doc["phi0"] = post.label_offset;
  }
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config) cfg[k] = v;
  doc["config"] = cfg;
  return doc;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

/// Horizontal bar chart: one bar per feature at phi_hat with a whisker over
/// its credible interval, largest |phi_hat| on top.
inline std::string explanation_svg(const PosteriorExplanation& post, const std::vector<std::string>& names) {
  const auto phi = post.feature_importances();
  const auto ivs = post.feature_intervals();
  const std::size_t d = ivs.size();
  if (names.size() != d) throw InvalidArgument("feature name count mismatch");
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(phi[static_cast<Eigen::Index>(a)]) > std::abs(phi[static_cast<Eigen::Index>(b)]);
  });
  double lo = 0.0, hi = 0.0;
  for (const auto& iv : ivs) {
    lo = std::min(lo, iv.low);
    hi = std::max(hi, iv.high);
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const double label_w = 140, plot_w = 420, row_h = 26, top = 30;
  const double height = top + row_h * static_cast<double>(d) + 30;
  auto px = [&](double v) { return label_w + (v - lo) / (hi - lo) * plot_w; };
  auto f = [](double v) { return format_double(std::round(v * 100.0) / 100.0); };

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f(label_w + plot_w + 20) << "\" height=\""
    << f(height) << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<text x=\"" << f(label_w) << "\" y=\"18\">feature importance, " << f(post.alpha * 100)
    << "% credible interval</text>\n"
    << "<line x1=\"" << f(px(0)) << "\" y1=\"" << f(top - 4) << "\" x2=\"" << f(px(0)) << "\" y2=\""
    << f(height - 26) << "\" stroke=\"#444\"/>\n";
  for (std::size_t r = 0; r < d; ++r) {
    const std::size_t j = order[r];
    const double v = phi[static_cast<Eigen::Index>(j)];
    const double y = top + row_h * static_cast<double>(r);
    const double x0 = px(std::min(0.0, v)), x1 = px(std::max(0.0, v));
    const double mid = y + row_h / 2 - 3;
    s << "<text x=\"" << f(label_w - 6) << "\" y=\"" << f(mid + 4) << "\" text-anchor=\"end\">"
      << detail::xml_escape(names[j]) << "</text>\n"
      << "<rect x=\"" << f(x0) << "\" y=\"" << f(y + 3) << "\" width=\"" << f(std::max(0.5, x1 - x0))
      << "\" height=\"" << f(row_h - 12) << "\" fill=\"" << (v >= 0 ? "#3b75af" : "#c44e52") << "\"/>\n"
      << "<line x1=\"" << f(px(ivs[j].low)) << "\" y1=\"" << f(mid) << "\" x2=\"" << f(px(ivs[j].high))
      << "\" y2=\"" << f(mid) << "\" stroke=\"black\"/>\n";
    for (double e : {ivs[j].low, ivs[j].high})
      s << "<line x1=\"" << f(px(e)) << "\" y1=\"" << f(mid - 4) << "\" x2=\"" << f(px(e)) << "\" y2=\""
        << f(mid + 4) << "\" stroke=\"black\"/>\n";
  }
  s << "<text x=\"" << f(px(lo)) << "\" y=\"" << f(height - 10) << "\">" << format_double(lo) << "</text>\n"
    << "<text x=\"" << f(px(hi)) << "\" y=\"" << f(height - 10) << "\" text-anchor=\"end\">" << format_double(hi)
    << "</text>\n"
    << "</svg>\n";
  return s.str();
}

}  // namespace credexp
