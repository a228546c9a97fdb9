#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "keynode/common.hpp"
#include "keynode/diffusion.hpp"
#include "keynode/io.hpp"

namespace keynode {

enum class TaskId { influence_range, influence_peak, peak_time };

inline constexpr std::array<TaskId, 3> kAllTasks = {TaskId::influence_range, TaskId::influence_peak,
                                                    TaskId::peak_time};

inline std::string_view to_string(TaskId t) {
  switch (t) {
    case TaskId::influence_range: return "influence_range";
    case TaskId::influence_peak: return "influence_peak";
    case TaskId::peak_time: return "peak_time";
  }
  return "influence_range";
}

inline TaskId parse_task(std::string_view s) {
  if (s == "influence_range" || s == "range") return TaskId::influence_range;
  if (s == "influence_peak" || s == "peak") return TaskId::influence_peak;
  if (s == "peak_time") return TaskId::peak_time;
  throw InvalidArgument("unknown task '" + std::string(s) + "'");
}

inline double task_value(const SimulationRecord& r, TaskId t) {
  switch (t) {
    case TaskId::influence_range: return r.mean_range;
    case TaskId::influence_peak: return r.mean_peak;
    case TaskId::peak_time: return r.mean_peak_time;
  }
  return r.mean_range;
}

enum class BinMethod { smart_kmeans, smart_dp_exact, fixed_top_percent, quantile, uniform };

inline std::string_view to_string(BinMethod m) {
  switch (m) {
    case BinMethod::smart_kmeans: return "smart_kmeans";
    case BinMethod::smart_dp_exact: return "smart_dp_exact";
    case BinMethod::fixed_top_percent: return "fixed_top_percent";
    case BinMethod::quantile: return "quantile";
    case BinMethod::uniform: return "uniform";
  }
  return "smart_kmeans";
}

inline BinMethod parse_bin_method(std::string_view s) {
  for (auto m : {BinMethod::smart_kmeans, BinMethod::smart_dp_exact, BinMethod::fixed_top_percent,
                 BinMethod::quantile, BinMethod::uniform})
    if (to_string(m) == s) return m;
  throw InvalidArgument("unknown binning method '" + std::string(s) + "'");
}

inline constexpr std::size_t kDefaultMaxK = 5;
inline constexpr std::size_t kDefaultMinBinSize = 10;
inline constexpr double kDefaultTopFraction = 0.05;

struct BinSpec {
  BinMethod method = BinMethod::smart_kmeans;
  std::size_t k = 2;
  std::optional<double> param;
};

/// Class labels for one value vector. Class k-1 always holds the largest
/// values. `boundaries[c-1]` is the smallest value placed in class c.
struct LabelSet {
  std::vector<int> labels;
  std::vector<double> centroids;
  std::vector<double> boundaries;
  BinSpec spec;
  TaskId task = TaskId::influence_range;
  double threshold = 0.0;
  double inertia = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  std::size_t k() const noexcept { return spec.k; }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(spec.k, 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    return counts;
  }

  /// Share of samples in the top class.
  double top_share() const {
    if (labels.empty()) return 0.0;
    return static_cast<double>(class_counts().back()) / static_cast<double>(labels.size());
  }

  /// Centroid value of sample i (clustering methods only).
  double assigned_value(std::size_t i) const { return centroids.at(static_cast<std::size_t>(labels[i])); }
};

namespace labeling_detail {

/// Sorted distinct values with multiplicities.
struct Weighted {
  std::vector<double> x;
  std::vector<double> w;
};

inline Weighted compress(const std::vector<double>& values) {
  for (double v : values)
    if (!std::isfinite(v)) throw InvalidArgument("non-finite value in binning input");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  Weighted out;
  for (double v : sorted) {
    if (out.x.empty() || out.x.back() != v) {
      out.x.push_back(v);
      out.w.push_back(1.0);
    } else {
      out.w.back() += 1.0;
    }
  }
  return out;
}

inline void check_clusterable(const Weighted& data, std::size_t n, std::size_t k) {
  if (k < 2) throw InvalidArgument("bin count must be >= 2");
  if (n < k) throw DegenerateInputError("fewer samples than bins");
  if (data.x.size() < k)
    throw DegenerateInputError("only " + std::to_string(data.x.size()) +
                               " distinct values for " + std::to_string(k) + " bins");
}

/// Cluster of each distinct value under nearest-centroid assignment with
/// sorted centroids; an exact midpoint goes to the lower cluster.
inline std::vector<int> assign_sorted(const std::vector<double>& x, const std::vector<double>& c) {
  std::vector<int> a(x.size());
  std::size_t j = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    while (j + 1 < c.size() && (x[i] - c[j]) > (c[j + 1] - x[i])) ++j;
    a[i] = static_cast<int>(j);
  }
  return a;
}

inline LabelSet expand(const std::vector<double>& values, const Weighted& data,
                       const std::vector<int>& unique_labels, std::size_t k) {
  LabelSet ls;
  ls.spec.k = k;
  ls.labels.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto it = std::lower_bound(data.x.begin(), data.x.end(), values[i]);
    ls.labels[i] = unique_labels[static_cast<std::size_t>(it - data.x.begin())];
  }
  // Centroids, inertia and lower class edges.
  std::vector<double> sw(k, 0.0), sx(k, 0.0);
  ls.boundaries.assign(k - 1, 0.0);
  std::vector<char> seen(k, 0);
  for (std::size_t i = 0; i < data.x.size(); ++i) {
    const auto c = static_cast<std::size_t>(unique_labels[i]);
    sw[c] += data.w[i];
    sx[c] += data.w[i] * data.x[i];
    if (!seen[c]) {
      seen[c] = 1;
      if (c > 0) ls.boundaries[c - 1] = data.x[i];
    }
  }
  ls.centroids.resize(k);
  for (std::size_t c = 0; c < k; ++c) ls.centroids[c] = sx[c] / sw[c];
  double inertia = 0.0;
  for (std::size_t i = 0; i < data.x.size(); ++i) {
    const double d = data.x[i] - ls.centroids[static_cast<std::size_t>(unique_labels[i])];
    inertia += data.w[i] * d * d;
  }
  ls.inertia = inertia;
  return ls;
}

}  // namespace labeling_detail

/// Sum of squared distances to the assigned class centroid.
inline double inertia_of(const std::vector<double>& values, const std::vector<int>& labels,
                         std::size_t k) {
  std::vector<double> sum(k, 0.0), cnt(k, 0.0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum[static_cast<std::size_t>(labels[i])] += values[i];
    cnt[static_cast<std::size_t>(labels[i])] += 1.0;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    const double d = values[i] - sum[c] / cnt[c];
    total += d * d;
  }
  return total;
}

struct KMeansOptions {
  std::size_t restarts = 10;
  std::size_t max_iterations = 300;
};

/// Smart Bins: 1-D k-means (k-means++ seeding, Lloyd iterations, best of
/// `restarts`). Classes are numbered by ascending centroid.
inline LabelSet smart_bins_kmeans(const std::vector<double>& values, std::size_t k,
                                  std::uint64_t seed, KMeansOptions options = {}) {
  using namespace labeling_detail;
  const Weighted data = compress(values);
  check_clusterable(data, values.size(), k);
  const std::size_t u = data.x.size();

  std::vector<int> best;
  double best_inertia = std::numeric_limits<double>::infinity();
  for (std::size_t restart = 0; restart < std::max<std::size_t>(1, options.restarts); ++restart) {
    Xoshiro256 rng(stable_hash({seed, restart, 0x6b6d65616e73ULL}));
    // k-means++ over distinct values weighted by multiplicity.
    std::vector<double> centers;
    std::vector<double> d2(u, std::numeric_limits<double>::infinity());
    auto pick = [&](const std::vector<double>& weight) {
      double total = 0.0;
      for (std::size_t i = 0; i < u; ++i) total += weight[i];
      double r = rng.uniform() * total;
      for (std::size_t i = 0; i < u; ++i) {
        r -= weight[i];
        if (r < 0.0 && weight[i] > 0.0) return i;
      }
      for (std::size_t i = u; i-- > 0;)
        if (weight[i] > 0.0) return i;
      return std::size_t{0};
    };
    centers.push_back(data.x[pick(data.w)]);
    while (centers.size() < k) {
      std::vector<double> weight(u);
      for (std::size_t i = 0; i < u; ++i) {
        const double d = data.x[i] - centers.back();
        d2[i] = std::min(d2[i], d * d);
        weight[i] = data.w[i] * d2[i];
      }
      centers.push_back(data.x[pick(weight)]);
    }
    std::sort(centers.begin(), centers.end());

    std::vector<int> assign;
    for (std::size_t it = 0; it < options.max_iterations; ++it) {
      auto next = assign_sorted(data.x, centers);
      std::vector<double> sw(k, 0.0), sx(k, 0.0);
      for (std::size_t i = 0; i < u; ++i) {
        sw[static_cast<std::size_t>(next[i])] += data.w[i];
        sx[static_cast<std::size_t>(next[i])] += data.w[i] * data.x[i];
      }
      bool relocated = false;
      for (std::size_t c = 0; c < k; ++c) {
        if (sw[c] > 0.0) {
          centers[c] = sx[c] / sw[c];
          continue;
        }
        // Empty cluster: move it onto the value farthest from its centroid.
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < u; ++i) {
          const double d = data.x[i] - centers[static_cast<std::size_t>(next[i])];
          if (data.w[i] * d * d > far_d &&
              std::find(centers.begin(), centers.end(), data.x[i]) == centers.end()) {
            far_d = data.w[i] * d * d;
            far = i;
          }
        }
        centers[c] = data.x[far];
        relocated = true;
      }
      std::sort(centers.begin(), centers.end());
      if (!relocated && next == assign) break;
      assign = std::move(next);
    }
    assign = assign_sorted(data.x, centers);
    std::vector<char> used(k, 0);
    for (int a : assign) used[static_cast<std::size_t>(a)] = 1;
    if (std::find(used.begin(), used.end(), 0) != used.end()) continue;
    double inertia = 0.0;
    std::vector<double> sw(k, 0.0), sx(k, 0.0);
    for (std::size_t i = 0; i < u; ++i) {
      sw[static_cast<std::size_t>(assign[i])] += data.w[i];
      sx[static_cast<std::size_t>(assign[i])] += data.w[i] * data.x[i];
    }
    for (std::size_t i = 0; i < u; ++i) {
      const auto c = static_cast<std::size_t>(assign[i]);
      const double d = data.x[i] - sx[c] / sw[c];
      inertia += data.w[i] * d * d;
    }
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best = std::move(assign);
    }
  }
  if (best.empty()) throw DegenerateInputError("k-means could not populate every cluster");
  LabelSet ls = expand(values, data, best, k);
  ls.spec = {BinMethod::smart_kmeans, k, std::nullopt};
  ls.seed = seed;
  return ls;
}

/// Globally optimal 1-D k-means by dynamic programming over the sorted
/// distinct values (divide-and-conquer over monotone split points).
inline LabelSet smart_bins_dp_exact(const std::vector<double>& values, std::size_t k) {
  using namespace labeling_detail;
  const Weighted data = compress(values);
  check_clusterable(data, values.size(), k);
  const std::size_t u = data.x.size();

  // Prefix sums of centred values keep the SSE formula well conditioned.
  long double mean = 0.0L, total_w = 0.0L;
  for (std::size_t i = 0; i < u; ++i) {
    mean += static_cast<long double>(data.w[i]) * data.x[i];
    total_w += data.w[i];
  }
  mean /= total_w;
  std::vector<long double> pw(u + 1, 0.0L), p1(u + 1, 0.0L), p2(u + 1, 0.0L);
  for (std::size_t i = 0; i < u; ++i) {
    const long double x = static_cast<long double>(data.x[i]) - mean;
    pw[i + 1] = pw[i] + data.w[i];
    p1[i + 1] = p1[i] + data.w[i] * x;
    p2[i + 1] = p2[i] + data.w[i] * x * x;
  }
  // SSE of distinct values [i, j] inclusive.
  auto cost = [&](std::size_t i, std::size_t j) {
    const long double w = pw[j + 1] - pw[i];
    const long double s = p1[j + 1] - p1[i];
    const long double c = (p2[j + 1] - p2[i]) - s * s / w;
    return c > 0.0L ? c : 0.0L;
  };

  constexpr long double kInf = std::numeric_limits<long double>::infinity();
  std::vector<std::vector<long double>> D(k, std::vector<long double>(u, kInf));
  std::vector<std::vector<std::size_t>> split(k, std::vector<std::size_t>(u, 0));
  for (std::size_t j = 0; j < u; ++j) D[0][j] = cost(0, j);

  for (std::size_t c = 1; c < k; ++c) {
    // D[c][j] = min over start i in [c, j] of D[c-1][i-1] + cost(i, j).
    auto solve = [&](auto&& self, std::size_t jlo, std::size_t jhi, std::size_t olo,
                     std::size_t ohi) -> void {
      if (jlo > jhi) return;
      const std::size_t mid = jlo + (jhi - jlo) / 2;
      long double best = kInf;
      std::size_t arg = std::max(olo, c);
      for (std::size_t i = std::max(olo, c); i <= std::min(ohi, mid); ++i) {
        const long double v = D[c - 1][i - 1] + cost(i, mid);
        if (v < best) {
          best = v;
          arg = i;
        }
      }
      D[c][mid] = best;
      split[c][mid] = arg;
      if (mid > jlo) self(self, jlo, mid - 1, olo, arg);
      self(self, mid + 1, jhi, arg, ohi);
    };
    solve(solve, c, u - 1, c, u - 1);
  }

  std::vector<int> unique_labels(u);
  std::size_t end = u - 1;
  for (std::size_t c = k; c-- > 0;) {
    const std::size_t start = c == 0 ? 0 : split[c][end];
    for (std::size_t i = start; i <= end; ++i) unique_labels[i] = static_cast<int>(c);
    if (c > 0) end = start - 1;
  }
  LabelSet ls = expand(values, data, unique_labels, k);
  ls.spec = {BinMethod::smart_dp_exact, k, std::nullopt};
  return ls;
}

/// Binary labels: class 1 holds every sample whose value is at least the
/// ceil(top_fraction * n)-th largest value, so ties can push the class
/// above the nominal share.
inline LabelSet fixed_bins_top_percent(const std::vector<double>& values,
                                       double top_fraction = kDefaultTopFraction) {
  if (!(top_fraction > 0.0 && top_fraction < 1.0))
    throw InvalidArgument("top fraction must lie in (0, 1)");
  const auto data = labeling_detail::compress(values);
  if (data.x.size() < 2) throw DegenerateInputError("constant input cannot be binned");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double raw = top_fraction * static_cast<double>(values.size());
  auto count = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  count = std::clamp<std::size_t>(count, 1, values.size());
  const double cutoff = sorted[count - 1];
  if (cutoff <= data.x.front())
    throw DegenerateInputError("top fraction covers every sample; lower class would be empty");
  LabelSet ls;
  ls.spec = {BinMethod::fixed_top_percent, 2, top_fraction};
  ls.labels.resize(values.size());
  double lo_sum = 0, lo_n = 0, hi_sum = 0, hi_n = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const bool top = values[i] >= cutoff;
    ls.labels[i] = top ? 1 : 0;
    (top ? hi_sum : lo_sum) += values[i];
    (top ? hi_n : lo_n) += 1.0;
  }
  ls.boundaries = {cutoff};
  ls.centroids = {lo_sum / lo_n, hi_sum / hi_n};
  ls.inertia = inertia_of(values, ls.labels, 2);
  return ls;
}

enum class BaselineKind { quantile, uniform };

/// Equal-count (quantile) or equal-width (uniform) bins. A bin that would be
/// empty is merged into its right neighbour and a warning is recorded, so
/// the returned k can be smaller than requested.
inline LabelSet baseline_bins(const std::vector<double>& values, std::size_t k, BaselineKind kind) {
  if (k < 2) throw InvalidArgument("bin count must be >= 2");
  const auto data = labeling_detail::compress(values);
  if (data.x.size() < 2) throw DegenerateInputError("constant input cannot be binned");
  const double lo = data.x.front(), hi = data.x.back();

  std::vector<double> edges;  // lower edges of bins 1..k-1
  if (kind == BaselineKind::quantile) {
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t b = 1; b < k; ++b) edges.push_back(sorted[b * sorted.size() / k]);
  } else {
    const double width = (hi - lo) / static_cast<double>(k);
    for (std::size_t b = 1; b < k; ++b) edges.push_back(lo + width * static_cast<double>(b));
  }

  auto bin_of = [&edges](double v) {
    return static_cast<int>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin());
  };
  LabelSet ls;
  ls.spec = {kind == BaselineKind::quantile ? BinMethod::quantile : BinMethod::uniform, k,
             std::nullopt};
  // Drop the lower edge of every empty bin but the last, merging it rightward.
  for (bool changed = true; changed;) {
    changed = false;
    std::vector<std::size_t> counts(edges.size() + 1, 0);
    for (double v : values) ++counts[static_cast<std::size_t>(bin_of(v))];
    for (std::size_t b = 0; b + 1 < counts.size(); ++b) {
      if (counts[b] != 0) continue;
      ls.warnings.push_back("empty bin " + std::to_string(b) + " merged into its right neighbour");
      edges.erase(edges.begin() + static_cast<std::ptrdiff_t>(b));
      changed = true;
      break;
    }
  }
  ls.spec.k = edges.size() + 1;
  ls.labels.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) ls.labels[i] = bin_of(values[i]);
  ls.boundaries = edges;
  const std::size_t kk = ls.spec.k;
  std::vector<double> sum(kk, 0.0), cnt(kk, 0.0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum[static_cast<std::size_t>(ls.labels[i])] += values[i];
    cnt[static_cast<std::size_t>(ls.labels[i])] += 1.0;
  }
  for (std::size_t c = 0; c < kk; ++c) ls.centroids.push_back(sum[c] / cnt[c]);
  ls.inertia = inertia_of(values, ls.labels, kk);
  return ls;
}

/// Largest k <= k_max whose exact optimal partition leaves every bin with at
/// least `min_bin_size` samples; 2 when none qualifies.
inline std::size_t select_k(const std::vector<double>& values, std::size_t k_max = kDefaultMaxK,
                            std::size_t min_bin_size = kDefaultMinBinSize) {
  if (k_max < 2) throw InvalidArgument("k_max must be >= 2");
  if (values.size() < 2 * min_bin_size)
    throw InvalidArgument("select_k needs at least 2 * min_bin_size samples");
  const auto distinct = labeling_detail::compress(values).x.size();
  for (std::size_t k = k_max; k >= 2; --k) {
    if (k > distinct) continue;
    const auto counts = smart_bins_dp_exact(values, k).class_counts();
    if (*std::min_element(counts.begin(), counts.end()) >= min_bin_size) return k;
  }
  return 2;
}

/// Dispatches on spec.method.
inline LabelSet make_labels(const std::vector<double>& values, const BinSpec& spec,
                            std::uint64_t seed) {
  switch (spec.method) {
    case BinMethod::smart_kmeans: return smart_bins_kmeans(values, spec.k, seed);
    case BinMethod::smart_dp_exact: return smart_bins_dp_exact(values, spec.k);
    case BinMethod::fixed_top_percent:
      return fixed_bins_top_percent(values, spec.param.value_or(kDefaultTopFraction));
    case BinMethod::quantile: return baseline_bins(values, spec.k, BaselineKind::quantile);
    case BinMethod::uniform: return baseline_bins(values, spec.k, BaselineKind::uniform);
  }
  throw InvalidArgument("unknown binning method");
}

// ---------------------------------------------------------------------------
// Grouping simulation records into labelled tasks
// ---------------------------------------------------------------------------

/// Labels for one task across all thresholds, aligned with `records`.
struct TaskLabels {
  TaskId task = TaskId::influence_range;
  BinSpec spec;
  bool pooled = false;
  std::vector<int> row_labels;     // one per simulation record
  std::vector<LabelSet> groups;    // one per threshold (or a single pooled group)
  std::vector<double> group_thresholds;
};

/// Distinct thresholds in first-appearance order.
inline std::vector<double> thresholds_of(const std::vector<SimulationRecord>& records) {
  std::vector<double> out;
  for (const auto& r : records)
    if (std::find(out.begin(), out.end(), r.threshold) == out.end()) out.push_back(r.threshold);
  return out;
}

/// Bins each threshold group separately (default) or all records together.
inline TaskLabels label_task(const std::vector<SimulationRecord>& records, TaskId task,
                             const BinSpec& spec, std::uint64_t seed, bool pooled = false) {
  TaskLabels out;
  out.task = task;
  out.spec = spec;
  out.pooled = pooled;
  out.row_labels.assign(records.size(), 0);
  const auto thresholds = thresholds_of(records);
  const std::size_t groups = pooled ? 1 : thresholds.size();
  for (std::size_t gi = 0; gi < groups; ++gi) {
    std::vector<std::size_t> rows;
    std::vector<double> values;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (pooled || records[i].threshold == thresholds[gi]) {
        rows.push_back(i);
        values.push_back(task_value(records[i], task));
      }
    LabelSet ls = make_labels(values, spec, stable_hash({seed, gi}));
    ls.task = task;
    ls.threshold = pooled ? 0.0 : thresholds[gi];
    for (std::size_t j = 0; j < rows.size(); ++j) out.row_labels[rows[j]] = ls.labels[j];
    out.groups.push_back(std::move(ls));
    out.group_thresholds.push_back(pooled ? 0.0 : thresholds[gi]);
  }
  out.spec.k = out.groups.front().k();
  for (const auto& g : out.groups)
    if (g.k() != out.spec.k)
      throw DegenerateInputError("threshold groups produced different bin counts");
  return out;
}

inline io::json label_metadata(const LabelSet& ls) {
  io::json j = {
      {"method", to_string(ls.spec.method)},
      {"k", ls.k()},
      {"task", to_string(ls.task)},
      {"threshold", ls.threshold},
      {"centroids", ls.centroids},
      {"boundaries", ls.boundaries},
      {"inertia", ls.inertia},
      {"seed", ls.seed},
      {"class_counts", ls.class_counts()},
      {"warnings", ls.warnings},
  };
  if (ls.spec.param) j["param"] = *ls.spec.param;
  return j;
}

/// CSV node,threshold,task,label for one group plus JSON metadata.
inline void save_labels(const LabelSet& ls, const std::vector<NodeId>& nodes,
                        const std::filesystem::path& csv_path) {
  std::string out = "node,threshold,task,label\n";
  for (std::size_t i = 0; i < ls.labels.size(); ++i)
    out += std::to_string(nodes[i]) + "," + io::format_double(ls.threshold) + "," +
           std::string(to_string(ls.task)) + "," + std::to_string(ls.labels[i]) + "\n";
  io::write_file(csv_path, out);
  auto meta = csv_path;
  meta.replace_extension(".json");
  io::write_json(meta, label_metadata(ls));
}

}  // namespace keynode
