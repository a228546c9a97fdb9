#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <span>
#include <type_traits>
#include <vector>

#include "keynode/common.hpp"
#include "keynode/features.hpp"

namespace keynode::tree {

/// Flat binary tree. Internal nodes route x[feature] <= threshold to the
/// left child; leaves carry `width` values starting at value[node * width].
struct FlatTree {
  std::size_t width = 1;
  std::vector<int> feature;
  std::vector<double> threshold;
  std::vector<int> left;
  std::vector<int> right;
  std::vector<double> value;

  std::size_t node_count() const noexcept { return feature.size(); }

  std::size_t leaf_of(std::span<const double> x) const {
    std::size_t node = 0;
    while (feature[node] >= 0)
      node = static_cast<std::size_t>(x[static_cast<std::size_t>(feature[node])] <= threshold[node]
                                          ? left[node]
                                          : right[node]);
    return node;
  }

  std::span<const double> predict(std::span<const double> x) const {
    return {value.data() + leaf_of(x) * width, width};
  }

  std::size_t leaf_count() const {
    return static_cast<std::size_t>(std::count(feature.begin(), feature.end(), -1));
  }

  friend bool operator==(const FlatTree&, const FlatTree&) = default;
};

struct GrowthParams {
  std::size_t max_leaves = 0;        // 0 = unlimited
  std::size_t max_depth = 0;         // 0 = unlimited
  double min_leaf_weight = 0.0;      // minimum summed sample weight per child
  double min_child_hessian = 0.0;    // gradient criterion only
  std::size_t max_features = 0;      // features examined per split; 0 = all
  double min_gain = 1e-12;
  std::uint64_t seed = 0;
};

/// Feature orderings computed once per training set and reused by every tree.
struct Presorted {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::vector<std::uint32_t>> order;  // per feature, rows by ascending value

  explicit Presorted(const FeatureMatrix& X) : rows(X.rows), cols(X.cols), order(X.cols) {
    for (std::size_t f = 0; f < cols; ++f) {
      auto& o = order[f];
      o.resize(rows);
      for (std::uint32_t i = 0; i < rows; ++i) o[i] = i;
      std::stable_sort(o.begin(), o.end(),
                       [&](std::uint32_t a, std::uint32_t b) { return X.at(a, f) < X.at(b, f); });
    }
  }
};

/// Gini impurity criterion over weighted class counts.
struct GiniCriterion {
  std::size_t classes = 2;
  std::span<const int> y;        // class index per row
  std::span<const double> w;     // sample weight per row (0 = absent)

  using Stats = std::vector<double>;
  Stats empty() const { return Stats(classes, 0.0); }
  void add(Stats& s, std::uint32_t row) const { s[static_cast<std::size_t>(y[row])] += w[row]; }
  double weight(const Stats& s) const {
    double t = 0.0;
    for (double v : s) t += v;
    return t;
  }
  double hessian(const Stats& s) const { return weight(s); }
  // Weighted impurity: W * gini = W - sum(c^2) / W.
  double score(const Stats& s) const {
    const double t = weight(s);
    if (t <= 0.0) return 0.0;
    double sq = 0.0;
    for (double v : s) sq += v * v;
    return sq / t;  // larger is better; impurity reduction is a difference of these
  }
  bool pure(const Stats& s) const {
    std::size_t nonzero = 0;
    for (double v : s) nonzero += v > 0.0;
    return nonzero <= 1;
  }
  void leaf(const Stats& s, std::span<double> out) const {
    const double t = weight(s);
    for (std::size_t c = 0; c < classes; ++c) out[c] = t > 0.0 ? s[c] / t : 0.0;
  }
  std::size_t width() const { return classes; }
};

/// Second-order gradient criterion (Newton boosting with L2 leaf penalty).
struct GradientCriterion {
  std::span<const double> grad;
  std::span<const double> hess;
  std::span<const double> w;  // row weight for leaf-size accounting
  double lambda = 1.0;

  struct Stats {
    double g = 0.0, h = 0.0, n = 0.0;
  };
  Stats empty() const { return {}; }
  void add(Stats& s, std::uint32_t row) const {
    s.g += grad[row];
    s.h += hess[row];
    s.n += w[row];
  }
  double weight(const Stats& s) const { return s.n; }
  double hessian(const Stats& s) const { return s.h; }
  double score(const Stats& s) const { return s.g * s.g / (s.h + lambda); }
  bool pure(const Stats&) const { return false; }
  void leaf(const Stats& s, std::span<double> out) const { out[0] = -s.g / (s.h + lambda); }
  std::size_t width() const { return 1; }
};

/// Grows one tree best-first (highest gain first; lower node id on ties).
/// Rows with zero weight are excluded. Each node owns the same contiguous
/// segment in every per-feature ordering; splitting stably partitions all
/// of them, keeping them sorted without re-sorting.
template <typename Criterion>
FlatTree grow(const FeatureMatrix& X, const Presorted& sorted, std::span<const double> row_weight,
              const Criterion& crit, const GrowthParams& params) {
  using Stats = typename Criterion::Stats;
  const std::size_t d = X.cols;
  std::vector<std::vector<std::uint32_t>> seg(d);
  for (std::size_t f = 0; f < d; ++f) {
    seg[f].reserve(sorted.rows);
    for (auto r : sorted.order[f])
      if (row_weight[r] > 0.0) seg[f].push_back(r);
  }
  const std::size_t n_rows = seg.empty() ? 0 : seg[0].size();

  FlatTree tree;
  tree.width = crit.width();

  struct Pending {
    std::size_t node, begin, end, depth;
    Stats stats;
    bool has_split = false;
    int feature = -1;
    double threshold = 0.0;
    std::size_t split_pos = 0;  // rows in left child
    double gain = 0.0;
  };

  auto new_node = [&] {
    tree.feature.push_back(-1);
    tree.threshold.push_back(0.0);
    tree.left.push_back(-1);
    tree.right.push_back(-1);
    tree.value.resize(tree.value.size() + tree.width, 0.0);
    return tree.feature.size() - 1;
  };

  std::vector<std::size_t> feature_pool(d);
  auto evaluate = [&](Pending& p) {
    p.has_split = false;
    if (params.max_depth != 0 && p.depth >= params.max_depth) return;
    if (p.end - p.begin < 2 || crit.pure(p.stats)) return;
    if (crit.weight(p.stats) < 2.0 * params.min_leaf_weight) return;
    for (std::size_t f = 0; f < d; ++f) feature_pool[f] = f;
    std::size_t candidates = d;
    if (params.max_features != 0 && params.max_features < d) {
      Xoshiro256 rng(stable_hash({params.seed, p.node, 0x66656174ULL}));
      for (std::size_t i = 0; i < params.max_features; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(d - i));
        std::swap(feature_pool[i], feature_pool[j]);
      }
      candidates = params.max_features;
      std::sort(feature_pool.begin(), feature_pool.begin() + static_cast<std::ptrdiff_t>(candidates));
    }
    const double parent = crit.score(p.stats);
    double best = params.min_gain;
    for (std::size_t fi = 0; fi < candidates; ++fi) {
      const std::size_t f = feature_pool[fi];
      const auto& rows = seg[f];
      Stats left = crit.empty();
      Stats right = crit.empty();
      for (std::size_t i = p.begin; i + 1 < p.end; ++i) {
        crit.add(left, rows[i]);
        const double xa = X.at(rows[i], f), xb = X.at(rows[i + 1], f);
        if (!(xa < xb)) continue;
        if (crit.weight(left) < params.min_leaf_weight) continue;
        right = p.stats;
        if constexpr (std::is_same_v<Stats, std::vector<double>>) {
          for (std::size_t c = 0; c < right.size(); ++c) right[c] -= left[c];
        } else {
          right.g -= left.g;
          right.h -= left.h;
          right.n -= left.n;
        }
        if (crit.weight(right) < params.min_leaf_weight) continue;
        if (crit.hessian(left) < params.min_child_hessian ||
            crit.hessian(right) < params.min_child_hessian)
          continue;
        const double gain = crit.score(left) + crit.score(right) - parent;
        if (gain > best) {
          best = gain;
          p.has_split = true;
          p.feature = static_cast<int>(f);
          double mid = xa + (xb - xa) / 2.0;
          if (!(mid < xb)) mid = xa;
          p.threshold = mid;
          p.split_pos = i + 1 - p.begin;
          p.gain = gain;
        }
      }
    }
  };

  auto node_stats = [&](std::size_t begin, std::size_t end) {
    Stats s = crit.empty();
    for (std::size_t i = begin; i < end; ++i) crit.add(s, seg[0][i]);
    return s;
  };

  auto cmp = [](const Pending& a, const Pending& b) {
    if (a.gain != b.gain) return a.gain < b.gain;
    return a.node > b.node;
  };
  std::priority_queue<Pending, std::vector<Pending>, decltype(cmp)> queue(cmp);

  Pending root{new_node(), 0, n_rows, 0, node_stats(0, n_rows)};
  crit.leaf(root.stats, std::span<double>(tree.value.data(), tree.width));
  evaluate(root);
  if (root.has_split) queue.push(root);
  std::size_t leaves = 1;

  std::vector<char> goes_left(sorted.rows, 0);
  std::vector<std::uint32_t> buffer;
  while (!queue.empty()) {
    if (params.max_leaves != 0 && leaves >= params.max_leaves) break;
    Pending p = queue.top();
    queue.pop();
    const auto f = static_cast<std::size_t>(p.feature);
    for (std::size_t i = p.begin; i < p.end; ++i) {
      const auto r = seg[f][i];
      goes_left[r] = X.at(r, f) <= p.threshold;
    }
    for (std::size_t g = 0; g < d; ++g) {
      auto& rows = seg[g];
      buffer.clear();
      std::size_t out = p.begin;
      for (std::size_t i = p.begin; i < p.end; ++i) {
        if (goes_left[rows[i]]) rows[out++] = rows[i];
        else buffer.push_back(rows[i]);
      }
      std::copy(buffer.begin(), buffer.end(), rows.begin() + static_cast<std::ptrdiff_t>(out));
    }
    const std::size_t mid = p.begin + p.split_pos;
    const std::size_t l = new_node(), r = new_node();
    tree.feature[p.node] = p.feature;
    tree.threshold[p.node] = p.threshold;
    tree.left[p.node] = static_cast<int>(l);
    tree.right[p.node] = static_cast<int>(r);
    ++leaves;
    Pending lp{l, p.begin, mid, p.depth + 1, node_stats(p.begin, mid)};
    Pending rp{r, mid, p.end, p.depth + 1, node_stats(mid, p.end)};
    crit.leaf(lp.stats, std::span<double>(tree.value.data() + l * tree.width, tree.width));
    crit.leaf(rp.stats, std::span<double>(tree.value.data() + r * tree.width, tree.width));
    evaluate(lp);
    evaluate(rp);
    if (lp.has_split) queue.push(lp);
    if (rp.has_split) queue.push(rp);
  }
  // Internal nodes keep their (unused) provisional leaf values; zero them
  // so serialized trees only carry meaningful leaf payloads.
  for (std::size_t nd = 0; nd < tree.node_count(); ++nd)
    if (tree.feature[nd] >= 0)
      std::fill_n(tree.value.begin() + static_cast<std::ptrdiff_t>(nd * tree.width), tree.width, 0.0);
  return tree;
}

inline io::json to_json(const FlatTree& t) {
  return {{"width", t.width},       {"feature", t.feature}, {"threshold", t.threshold},
          {"left", t.left},         {"right", t.right},     {"value", t.value}};
}

inline FlatTree from_json(const io::json& j) {
  FlatTree t;
  t.width = j.at("width");
  t.feature = j.at("feature").get<std::vector<int>>();
  t.threshold = j.at("threshold").get<std::vector<double>>();
  t.left = j.at("left").get<std::vector<int>>();
  t.right = j.at("right").get<std::vector<int>>();
  t.value = j.at("value").get<std::vector<double>>();
  return t;
}

}  // namespace keynode::tree
