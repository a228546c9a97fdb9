#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "keynode/common.hpp"
#include "keynode/features.hpp"
#include "keynode/io.hpp"
#include "keynode/models.hpp"

namespace keynode {

/// Attribution estimate per feature with its Monte Carlo standard error.
struct ShapleyEstimate {
  std::vector<double> values;
  std::vector<double> standard_error;
  double f_x = 0.0;               // scorer at x
  double f_background_mean = 0.0; // mean scorer over the background rows drawn
  std::size_t permutations = 0;
};

/// Permutation-sampling Shapley values for a scalar scorer f(row).
///
/// Each permutation draws one background row b, starts from z = b and
/// switches features to x in permutation order; the change in f at each
/// switch is that feature's marginal contribution. Contributions sum to
/// f(x) - f(b) per permutation, so efficiency holds against the mean of the
/// drawn background rows.
template <typename Scorer>
ShapleyEstimate shapley_sample(Scorer&& f, std::span<const double> x, const FeatureMatrix& background,
                               std::size_t permutations, std::uint64_t seed) {
  if (permutations == 0) throw InvalidArgument("permutations must be >= 1");
  if (background.rows == 0) throw InvalidArgument("background sample is empty");
  if (background.cols != x.size()) throw ValidationError("background width differs from the row width");
  const std::size_t d = x.size();
  Xoshiro256 rng(seed);
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> z(d), sum(d, 0.0), sum_sq(d, 0.0);
  double bg_sum = 0.0;
  const double fx = f(std::span<const double>(x));
  for (std::size_t p = 0; p < permutations; ++p) {
    shuffle(order, rng);
    const auto b = background.row(static_cast<std::size_t>(rng.below(background.rows)));
    std::copy(b.begin(), b.end(), z.begin());
    double prev = f(std::span<const double>(z));
    bg_sum += prev;
    for (std::size_t i : order) {
      z[i] = x[i];
      const double cur = f(std::span<const double>(z));
      const double delta = cur - prev;
      sum[i] += delta;
      sum_sq[i] += delta * delta;
      prev = cur;
    }
  }
  ShapleyEstimate out;
  out.permutations = permutations;
  out.f_x = fx;
  const auto P = static_cast<double>(permutations);
  out.f_background_mean = bg_sum / P;
  out.values.resize(d);
  out.standard_error.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double mean = sum[i] / P;
    out.values[i] = mean;
    const double var = permutations > 1 ? std::max(0.0, (sum_sq[i] - P * mean * mean) / (P - 1.0)) : 0.0;
    out.standard_error[i] = std::sqrt(var / P);
  }
  return out;
}

/// Index of the predicted class for x (lowest index on ties).
inline std::size_t predicted_class_index(const TrainedModel& m, std::span<const double> x) {
  std::vector<double> proba(m.class_count());
  predict_proba_row(m, x, proba);
  return model_detail::argmax(proba);
}

/// Shapley values of the probability the model assigns to its predicted
/// class for x.
inline ShapleyEstimate shapley_sample(const TrainedModel& m, std::span<const double> x,
                                      const FeatureMatrix& background, std::size_t permutations,
                                      std::uint64_t seed) {
  if (background.names != m.feature_names)
    throw ValidationError("background columns do not match the model's feature names");
  const std::size_t target = predicted_class_index(m, x);
  std::vector<double> proba(m.class_count());
  auto f = [&](std::span<const double> row) {
    predict_proba_row(m, row, proba);
    return proba[target];
  };
  return shapley_sample(f, x, background, permutations, seed);
}

struct ImportanceOptions {
  std::size_t sample_size = 500;
  std::size_t permutations = 200;
  std::size_t background_size = 100;
  std::uint64_t seed = 0;
  bool keep_per_sample = false;
};

struct ImportanceReport {
  std::vector<std::string> feature_names;
  std::vector<double> mean_abs_shapley;
  std::vector<std::vector<double>> per_sample_shapley;  // empty unless requested
  std::vector<std::size_t> sample_rows;
  std::size_t samples_used = 0;
  std::size_t permutations_per_sample = 0;
  std::size_t background_size = 0;
  std::uint64_t seed = 0;

  /// Feature indices by descending importance (lower index on ties).
  std::vector<std::size_t> ranking() const {
    std::vector<std::size_t> idx(mean_abs_shapley.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return mean_abs_shapley[a] > mean_abs_shapley[b]; });
    return idx;
  }

  /// 1-based rank of a named feature.
  std::size_t rank_of(std::string_view name) const {
    const auto r = ranking();
    for (std::size_t i = 0; i < r.size(); ++i)
      if (feature_names[r[i]] == name) return i + 1;
    throw ValidationError("no feature named '" + std::string(name) + "'");
  }

  io::json to_json() const {
    io::json j = {{"feature_names", feature_names},
                  {"mean_abs_shapley", mean_abs_shapley},
                  {"samples_used", samples_used},
                  {"permutations_per_sample", permutations_per_sample},
                  {"background_size", background_size},
                  {"seed", seed},
                  {"sample_rows", sample_rows}};
    if (!per_sample_shapley.empty()) j["per_sample_shapley"] = per_sample_shapley;
    return j;
  }

  std::string ranked_csv() const {
    std::string out = "feature,mean_abs_shapley\n";
    for (std::size_t i : ranking()) out += feature_names[i] + "," + io::format_double(mean_abs_shapley[i]) + "\n";
    return out;
  }
};

namespace importance_detail {

/// `count` distinct row indices of [0, n), sorted.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Xoshiro256 rng(seed);
  count = std::min(count, n);
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + static_cast<std::size_t>(rng.below(n - i))]);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace importance_detail

/// Mean |Shapley| over a seeded sample of X's rows, with a seeded background
/// drawn from X. X must already be standardized like the training data.
inline ImportanceReport importance_report(const TrainedModel& m, const FeatureMatrix& X,
                                          const ImportanceOptions& options) {
  if (X.rows == 0) throw InvalidArgument("importance needs a non-empty matrix");
  if (X.names != m.feature_names) throw ValidationError("feature columns do not match the model's feature names");
  if (options.sample_size == 0 || options.sample_size > X.rows)
    throw InvalidArgument("sample_size must be in [1, rows]");
  if (options.background_size == 0) throw InvalidArgument("background_size must be >= 1");
  ImportanceReport rep;
  rep.feature_names = X.names;
  rep.seed = options.seed;
  rep.permutations_per_sample = options.permutations;
  rep.sample_rows = importance_detail::sample_without_replacement(X.rows, options.sample_size,
                                                                  stable_hash({options.seed, 0x73616d70ULL}));
  const auto bg_rows = importance_detail::sample_without_replacement(X.rows, options.background_size,
                                                                     stable_hash({options.seed, 0x6267ULL}));
  const FeatureMatrix background = X.select_rows(bg_rows);
  rep.background_size = background.rows;
  rep.samples_used = rep.sample_rows.size();

  std::vector<std::vector<double>> per_sample(rep.samples_used);
  parallel_for(rep.samples_used, [&](std::size_t s) {
    const auto row = rep.sample_rows[s];
    per_sample[s] = shapley_sample(m, X.row(row), background, options.permutations,
                                   stable_hash({options.seed, row, 0x726f77ULL}))
                        .values;
  });
  rep.mean_abs_shapley.assign(X.cols, 0.0);
  for (const auto& v : per_sample)
    for (std::size_t f = 0; f < X.cols; ++f) rep.mean_abs_shapley[f] += std::abs(v[f]);
  for (double& v : rep.mean_abs_shapley) v /= static_cast<double>(rep.samples_used);
  if (options.keep_per_sample) rep.per_sample_shapley = std::move(per_sample);
  return rep;
}

}  // namespace keynode
