#pragma once

#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "keynode/centrality.hpp"
#include "keynode/common.hpp"
#include "keynode/diffusion.hpp"
#include "keynode/io.hpp"

namespace keynode {

inline constexpr std::size_t kFeatureCount = kCentralityCount + 1;

/// 14 centrality names in CentralityId order followed by "threshold".
inline std::vector<std::string> feature_names() {
  std::vector<std::string> names(kCentralityNames.begin(), kCentralityNames.end());
  names.emplace_back("threshold");
  return names;
}

/// Dense row-major sample matrix. Each row is one (node, threshold) sample.
struct FeatureMatrix {
  std::vector<std::string> names;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<NodeId> nodes;
  std::vector<double> thresholds;

  FeatureMatrix() = default;
  FeatureMatrix(std::vector<std::string> column_names, std::size_t row_count)
      : names(std::move(column_names)), rows(row_count), cols(names.size()),
        values(rows * cols, 0.0), nodes(rows, 0), thresholds(rows, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

  FeatureMatrix select_rows(const std::vector<std::size_t>& idx) const {
    FeatureMatrix out(names, idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(idx[i] * cols), cols,
                  out.values.begin() + static_cast<std::ptrdiff_t>(i * cols));
      out.nodes[i] = nodes[idx[i]];
      out.thresholds[i] = thresholds[idx[i]];
    }
    return out;
  }

  std::size_t column_index(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw ValidationError("no feature column '" + std::string(name) + "'");
  }
};

/// Raw embedding: row (v, p) = [14 centralities of v, p], node-major with
/// thresholds in the given order (matching simulate_all's record order).
inline FeatureMatrix assemble_features(const std::vector<NodeScoreMap>& centralities,
                                       const ThresholdSet& thresholds) {
  std::vector<const NodeScoreMap*> by_id(kCentralityCount, nullptr);
  for (const auto& m : centralities) by_id[static_cast<std::size_t>(m.measure)] = &m;
  for (std::size_t i = 0; i < kCentralityCount; ++i)
    if (!by_id[i])
      throw ValidationError("feature assembly: missing measure '" +
                            std::string(kCentralityNames[i]) + "'");
  const std::size_t n = by_id[0]->scores.size();
  for (const auto* m : by_id)
    if (m->scores.size() != n)
      throw ValidationError("feature assembly: measure '" + std::string(to_string(m->measure)) +
                            "' has inconsistent length");
  if (thresholds.values.empty()) throw ValidationError("feature assembly: no thresholds");

  const std::size_t t = thresholds.values.size();
  FeatureMatrix fm(feature_names(), n * t);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t ti = 0; ti < t; ++ti) {
      const std::size_t r = v * t + ti;
      for (std::size_t c = 0; c < kCentralityCount; ++c) fm.at(r, c) = by_id[c]->scores[v];
      fm.at(r, kCentralityCount) = thresholds.values[ti];
      fm.nodes[r] = static_cast<NodeId>(v);
      fm.thresholds[r] = thresholds.values[ti];
    }
  return fm;
}

/// Per-column z-score parameters (population standard deviation). Constant
/// columns are flagged and left unchanged by apply/invert.
struct Standardizer {
  std::vector<std::string> names;
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<bool> constant;

  FeatureMatrix apply(const FeatureMatrix& m) const {
    check(m);
    FeatureMatrix out = m;
    for (std::size_t r = 0; r < m.rows; ++r)
      for (std::size_t c = 0; c < m.cols; ++c)
        if (!constant[c]) out.at(r, c) = (m.at(r, c) - mean[c]) / stddev[c];
    return out;
  }

  FeatureMatrix invert(const FeatureMatrix& m) const {
    check(m);
    FeatureMatrix out = m;
    for (std::size_t r = 0; r < m.rows; ++r)
      for (std::size_t c = 0; c < m.cols; ++c)
        if (!constant[c]) out.at(r, c) = m.at(r, c) * stddev[c] + mean[c];
    return out;
  }

  io::json to_json() const {
    io::json cols = io::json::array();
    for (std::size_t c = 0; c < names.size(); ++c)
      cols.push_back({{"name", names[c]}, {"mean", mean[c]}, {"std", stddev[c]},
                      {"constant", static_cast<bool>(constant[c])}});
    return {{"ddof", 0}, {"columns", cols}};
  }

  static Standardizer from_json(const io::json& j) {
    Standardizer s;
    for (const auto& col : j.at("columns")) {
      s.names.push_back(col.at("name"));
      s.mean.push_back(col.at("mean"));
      s.stddev.push_back(col.at("std"));
      s.constant.push_back(col.at("constant"));
    }
    return s;
  }

 private:
  void check(const FeatureMatrix& m) const {
    if (m.names != names) throw ValidationError("standardizer columns do not match matrix");
  }
};

inline Standardizer fit_standardizer(const FeatureMatrix& m) {
  if (m.rows == 0) throw ValidationError("cannot fit a standardizer on an empty matrix");
  if (m.rows < 2) throw ValidationError("standardizer needs at least 2 rows");
  Standardizer s;
  s.names = m.names;
  s.mean.assign(m.cols, 0.0);
  s.stddev.assign(m.cols, 0.0);
  s.constant.assign(m.cols, false);
  std::vector<char> constant(m.cols, 0);
  parallel_for(m.cols, [&](std::size_t c) {
    double sum = 0.0;
    bool all_equal = true;
    const double first = m.at(0, c);
    for (std::size_t r = 0; r < m.rows; ++r) {
      sum += m.at(r, c);
      all_equal = all_equal && m.at(r, c) == first;
    }
    const double mu = sum / static_cast<double>(m.rows);
    double ss = 0.0;
    for (std::size_t r = 0; r < m.rows; ++r) {
      const double d = m.at(r, c) - mu;
      ss += d * d;
    }
    s.mean[c] = mu;
    s.stddev[c] = std::sqrt(ss / static_cast<double>(m.rows));
    constant[c] = all_equal || s.stddev[c] == 0.0;
  });
  for (std::size_t c = 0; c < m.cols; ++c) s.constant[c] = constant[c] != 0;
  return s;
}

inline FeatureMatrix apply_standardizer(const FeatureMatrix& m, const Standardizer& s) {
  return s.apply(m);
}

inline std::string format_feature_csv(const FeatureMatrix& m) {
  std::string out = "node";
  for (const auto& n : m.names) out += "," + n;
  out += '\n';
  for (std::size_t r = 0; r < m.rows; ++r) {
    out += std::to_string(m.nodes[r]);
    for (std::size_t c = 0; c < m.cols; ++c) out += "," + io::format_double(m.at(r, c));
    out += '\n';
  }
  return out;
}

inline void save_features(const FeatureMatrix& m, const std::filesystem::path& csv_path) {
  io::write_file(csv_path, format_feature_csv(m));
}

/// Reads a feature CSV; the header must list the canonical feature names in order.
inline FeatureMatrix load_features(const std::filesystem::path& csv_path) {
  const auto table = io::read_csv(csv_path);
  std::vector<std::string> names(table.header.begin() + 1, table.header.end());
  if (table.header.empty() || table.header.front() != "node" || names != feature_names())
    throw ValidationError("feature CSV header does not match the canonical feature order");
  FeatureMatrix m(names, table.rows.size());
  std::size_t line = 1;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    ++line;
    m.nodes[r] = static_cast<NodeId>(io::parse_double(table.rows[r][0], line));
    for (std::size_t c = 0; c < m.cols; ++c) m.at(r, c) = io::parse_double(table.rows[r][c + 1], line);
    m.thresholds[r] = m.at(r, m.cols - 1);
  }
  return m;
}

}  // namespace keynode
