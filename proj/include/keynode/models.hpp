#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "keynode/common.hpp"
#include "keynode/features.hpp"
#include "keynode/io.hpp"
#include "keynode/tree.hpp"

namespace keynode {

enum class ModelKind { logreg, knn, random_forest, gbm };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::logreg: return "logreg";
    case ModelKind::knn: return "knn";
    case ModelKind::random_forest: return "random_forest";
    case ModelKind::gbm: return "gbm";
  }
  return "gbm";
}

inline ModelKind parse_model_kind(std::string_view s) {
  for (auto k : {ModelKind::logreg, ModelKind::knn, ModelKind::random_forest, ModelKind::gbm})
    if (to_string(k) == s) return k;
  throw InvalidArgument("unknown model kind '" + std::string(s) + "'");
}

/// Model family plus hyperparameters. Missing hyperparameters take the
/// documented defaults (see default_hyperparams).
struct ModelSpec {
  ModelKind kind = ModelKind::gbm;
  std::map<std::string, double> hyperparams;
  std::uint64_t seed = 0;

  double get(const std::string& name) const;

  io::json to_json() const {
    io::json hp = io::json::object();
    for (const auto& [k, v] : resolved()) hp[k] = v;
    return {{"kind", to_string(kind)}, {"hyperparams", hp}, {"seed", seed}};
  }

  static ModelSpec from_json(const io::json& j) {
    ModelSpec s;
    s.kind = parse_model_kind(j.at("kind").get<std::string>());
    if (j.contains("hyperparams"))
      for (const auto& [k, v] : j.at("hyperparams").items()) s.hyperparams[k] = v.get<double>();
    s.seed = j.value("seed", std::uint64_t{0});
    for (const auto& [k, v] : s.hyperparams) (void)s.get(k);
    return s;
  }

  std::map<std::string, double> resolved() const;
};

inline std::map<std::string, double> default_hyperparams(ModelKind kind) {
  switch (kind) {
    case ModelKind::logreg:
      return {{"l2", 1e-4}, {"max_iterations", 500}, {"tolerance", 1e-6},
              {"class_weight_balanced", 0}};
    case ModelKind::knn: return {{"k", 5}, {"class_weight_balanced", 0}};
    case ModelKind::random_forest:
      // max_features: 0 = floor(sqrt(d)), -1 = all features, otherwise a count.
      return {{"trees", 100},   {"max_depth", 0},        {"max_features", 0},
              {"bootstrap", 1}, {"class_weight_balanced", 0}};
    case ModelKind::gbm:
      return {{"rounds", 100},         {"learning_rate", 0.1},
              {"max_leaves", 31},      {"lambda", 1.0},
              {"min_child_hessian", 1e-3}, {"class_weight_balanced", 0}};
  }
  return {};
}

inline std::map<std::string, double> ModelSpec::resolved() const {
  auto all = default_hyperparams(kind);
  for (const auto& [k, v] : hyperparams) all[k] = v;
  return all;
}

inline double ModelSpec::get(const std::string& name) const {
  if (auto it = hyperparams.find(name); it != hyperparams.end()) {
    const auto defaults = default_hyperparams(kind);
    if (!defaults.contains(name))
      throw InvalidArgument("hyperparameter '" + name + "' is not defined for " +
                            std::string(to_string(kind)));
    return it->second;
  }
  const auto defaults = default_hyperparams(kind);
  if (auto it = defaults.find(name); it != defaults.end()) return it->second;
  throw InvalidArgument("hyperparameter '" + name + "' is not defined for " +
                        std::string(to_string(kind)));
}

// ---------------------------------------------------------------------------
// Parameter blocks
// ---------------------------------------------------------------------------

struct LogRegParams {
  std::size_t classes = 0;
  std::size_t features = 0;
  std::vector<double> weights;  // classes x features, row-major
  std::vector<double> bias;     // classes
  std::size_t iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
};

struct KnnParams {
  std::size_t k = 5;
  std::size_t features = 0;
  std::vector<double> points;  // training rows, row-major
  std::vector<int> labels;     // class index per training row
  std::vector<double> class_weight;
};

struct ForestParams {
  std::vector<tree::FlatTree> trees;
};

struct GbmParams {
  double learning_rate = 0.1;
  std::vector<double> init;                  // per-class base score
  std::vector<std::vector<tree::FlatTree>> rounds;  // rounds x classes
};

/// A fitted classifier. Class indices internal to the parameter blocks map
/// to `classes[i]`.
struct TrainedModel {
  ModelSpec spec;
  std::vector<int> classes;
  std::vector<std::string> feature_names;
  std::variant<LogRegParams, KnnParams, ForestParams, GbmParams> params;

  std::size_t class_count() const noexcept { return classes.size(); }
};

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

namespace model_detail {

inline void validate_training(const FeatureMatrix& X, std::span<const int> y) {
  if (X.rows != y.size()) throw ValidationError("feature rows and labels differ in length");
  if (X.rows == 0) throw ValidationError("empty training set");
  for (double v : X.values)
    if (!std::isfinite(v)) throw ValidationError("non-finite feature value in training data");
}

inline void validate_columns(const TrainedModel& m, const FeatureMatrix& X) {
  if (X.names != m.feature_names)
    throw ValidationError("feature columns do not match the model's feature names");
}

/// Maps labels to 0..C-1 by ascending label value.
inline std::vector<int> encode(std::span<const int> y, std::vector<int>& classes) {
  classes.assign(y.begin(), y.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2) throw TrainingError("training labels contain a single class");
  std::vector<int> idx(y.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    idx[i] = static_cast<int>(std::lower_bound(classes.begin(), classes.end(), y[i]) - classes.begin());
  return idx;
}

/// Per-row weights: 1, or N / (C * n_c) when balancing is requested.
inline std::vector<double> row_weights(const std::vector<int>& yi, std::size_t classes,
                                       bool balanced) {
  std::vector<double> w(yi.size(), 1.0);
  if (!balanced) return w;
  std::vector<double> count(classes, 0.0);
  for (int c : yi) count[static_cast<std::size_t>(c)] += 1.0;
  for (std::size_t i = 0; i < yi.size(); ++i)
    w[i] = static_cast<double>(yi.size()) /
           (static_cast<double>(classes) * count[static_cast<std::size_t>(yi[i])]);
  return w;
}

inline void softmax(std::span<double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    s += v;
  }
  for (double& v : z) v /= s;
}

/// Lowest index among maximal entries.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace model_detail

// ---------------------------------------------------------------------------
// Multinomial logistic regression
// ---------------------------------------------------------------------------

/// Loss (weighted mean cross-entropy + l2/2 * ||W||^2, bias unpenalized) and
/// its gradient at `theta` = [W row-major, b].
inline double logreg_loss_grad(const FeatureMatrix& X, std::span<const int> y,
                               std::span<const double> row_weight, std::size_t classes,
                               double l2, std::span<const double> theta, std::span<double> grad) {
  const std::size_t d = X.cols, C = classes;
  std::fill(grad.begin(), grad.end(), 0.0);
  double total_w = 0.0;
  for (double w : row_weight) total_w += w;
  double loss = 0.0;
  std::vector<double> z(C);
  for (std::size_t i = 0; i < X.rows; ++i) {
    const auto x = X.row(i);
    for (std::size_t c = 0; c < C; ++c) {
      double s = theta[C * d + c];
      for (std::size_t f = 0; f < d; ++f) s += theta[c * d + f] * x[f];
      z[c] = s;
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double se = 0.0;
    for (double v : z) se += std::exp(v - mx);
    const double lse = mx + std::log(se);
    const double w = row_weight[i] / total_w;
    loss += w * (lse - z[static_cast<std::size_t>(y[i])]);
    for (std::size_t c = 0; c < C; ++c) {
      const double r = w * (std::exp(z[c] - lse) - (static_cast<int>(c) == y[i] ? 1.0 : 0.0));
      for (std::size_t f = 0; f < d; ++f) grad[c * d + f] += r * x[f];
      grad[C * d + c] += r;
    }
  }
  for (std::size_t j = 0; j < C * d; ++j) {
    loss += 0.5 * l2 * theta[j] * theta[j];
    grad[j] += l2 * theta[j];
  }
  return loss;
}

namespace model_detail {

inline LogRegParams fit_logreg(const FeatureMatrix& X, const std::vector<int>& yi,
                               std::size_t classes, const ModelSpec& spec) {
  const double l2 = spec.get("l2");
  const auto max_iter = static_cast<std::size_t>(spec.get("max_iterations"));
  const double tol = spec.get("tolerance");
  const auto rw = row_weights(yi, classes, spec.get("class_weight_balanced") != 0.0);
  const std::size_t d = X.cols, dim = classes * d + classes;

  std::vector<double> theta(dim, 0.0), grad(dim), next(dim), next_grad(dim), dir(dim);
  auto eval = [&](const std::vector<double>& t, std::vector<double>& g) {
    return logreg_loss_grad(X, yi, rw, classes, l2, t, g);
  };
  auto inf_norm = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
  };
  // L-BFGS (memory 10) with Armijo backtracking.
  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;
  double loss = eval(theta, grad);
  LogRegParams p;
  std::size_t it = 0;
  for (; it < max_iter && inf_norm(grad) > tol; ++it) {
    dir = grad;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      double a = 0.0;
      for (std::size_t j = 0; j < dim; ++j) a += s_hist[k][j] * dir[j];
      a *= rho_hist[k];
      alpha[k] = a;
      for (std::size_t j = 0; j < dim; ++j) dir[j] -= a * y_hist[k][j];
    }
    if (!s_hist.empty()) {
      double sy = 0.0, yy = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        sy += s_hist.back()[j] * y_hist.back()[j];
        yy += y_hist.back()[j] * y_hist.back()[j];
      }
      for (double& v : dir) v *= sy / yy;
    }
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      double b = 0.0;
      for (std::size_t j = 0; j < dim; ++j) b += y_hist[k][j] * dir[j];
      b *= rho_hist[k];
      for (std::size_t j = 0; j < dim; ++j) dir[j] += s_hist[k][j] * (alpha[k] - b);
    }
    for (double& v : dir) v = -v;
    double slope = 0.0;
    for (std::size_t j = 0; j < dim; ++j) slope += dir[j] * grad[j];
    if (slope >= 0.0) {  // not a descent direction: restart from steepest descent
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      for (std::size_t j = 0; j < dim; ++j) dir[j] = -grad[j];
      slope = 0.0;
      for (std::size_t j = 0; j < dim; ++j) slope += dir[j] * grad[j];
    }
    double step = 1.0;
    double next_loss = 0.0;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t j = 0; j < dim; ++j) next[j] = theta[j] + step * dir[j];
      next_loss = eval(next, next_grad);
      if (next_loss <= loss + 1e-4 * step * slope) break;
      step *= 0.5;
    }
    if (!(next_loss <= loss)) break;  // line search failed; keep current point
    std::vector<double> s(dim), yv(dim);
    double sy = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      s[j] = next[j] - theta[j];
      yv[j] = next_grad[j] - grad[j];
      sy += s[j] * yv[j];
    }
    theta.swap(next);
    grad.swap(next_grad);
    const double improvement = loss - next_loss;
    loss = next_loss;
    if (sy > 1e-12) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(yv));
      rho_hist.push_back(1.0 / sy);
      if (s_hist.size() > 10) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    if (improvement <= 1e-16 * std::max(1.0, std::abs(loss))) {
      ++it;
      break;
    }
  }
  p.classes = classes;
  p.features = d;
  p.weights.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(classes * d));
  p.bias.assign(theta.begin() + static_cast<std::ptrdiff_t>(classes * d), theta.end());
  p.iterations = it;
  p.gradient_norm = inf_norm(grad);
  p.converged = p.gradient_norm <= tol;
  return p;
}

inline void logreg_scores(const LogRegParams& p, std::span<const double> x, std::span<double> out) {
  for (std::size_t c = 0; c < p.classes; ++c) {
    double s = p.bias[c];
    for (std::size_t f = 0; f < p.features; ++f) s += p.weights[c * p.features + f] * x[f];
    out[c] = s;
  }
}

// ---------------------------------------------------------------------------
// k-nearest neighbours
// ---------------------------------------------------------------------------

inline void knn_votes(const KnnParams& p, std::span<const double> x, std::span<double> votes,
                      std::vector<std::pair<double, std::size_t>>& scratch) {
  const std::size_t n = p.labels.size();
  scratch.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d2 = 0.0;
    const double* q = p.points.data() + i * p.features;
    for (std::size_t f = 0; f < p.features; ++f) {
      const double t = q[f] - x[f];
      d2 += t * t;
    }
    scratch[i] = {d2, i};
  }
  const std::size_t k = std::min(p.k, n);
  std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k), scratch.end());
  std::fill(votes.begin(), votes.end(), 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    const auto c = static_cast<std::size_t>(p.labels[scratch[j].second]);
    votes[c] += p.class_weight[c];
  }
  double total = 0.0;
  for (double v : votes) total += v;
  for (double& v : votes) v /= total;
}

// ---------------------------------------------------------------------------
// Trees
// ---------------------------------------------------------------------------

inline tree::FlatTree fit_tree(const FeatureMatrix& X, const tree::Presorted& sorted,
                               const std::vector<int>& yi, std::size_t classes,
                               std::span<const double> weights, std::size_t max_features,
                               std::size_t max_depth, std::uint64_t seed) {
  tree::GiniCriterion crit{classes, yi, weights};
  tree::GrowthParams gp;
  gp.max_features = max_features;
  gp.max_depth = max_depth;
  gp.seed = seed;
  return tree::grow(X, sorted, weights, crit, gp);
}

inline ForestParams fit_forest(const FeatureMatrix& X, const std::vector<int>& yi,
                               std::size_t classes, const ModelSpec& spec) {
  const auto trees = static_cast<std::size_t>(spec.get("trees"));
  if (trees == 0) throw InvalidArgument("random_forest needs at least one tree");
  const bool bootstrap = spec.get("bootstrap") != 0.0;
  const double mf = spec.get("max_features");
  std::size_t max_features = 0;
  if (mf == 0.0) max_features = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(X.cols))));
  else if (mf > 0.0) max_features = static_cast<std::size_t>(mf);
  const auto max_depth = static_cast<std::size_t>(spec.get("max_depth"));
  const auto cw = row_weights(yi, classes, spec.get("class_weight_balanced") != 0.0);
  const tree::Presorted sorted(X);
  ForestParams fp;
  fp.trees.resize(trees);
  parallel_for(trees, [&](std::size_t t) {
    const std::uint64_t tree_seed = stable_hash({spec.seed, t, 0x74726565ULL});
    std::vector<double> w(X.rows, 0.0);
    if (bootstrap) {
      Xoshiro256 rng(tree_seed);
      for (std::size_t i = 0; i < X.rows; ++i) w[rng.below(X.rows)] += 1.0;
    } else {
      std::fill(w.begin(), w.end(), 1.0);
    }
    for (std::size_t i = 0; i < X.rows; ++i) w[i] *= cw[i];
    fp.trees[t] = fit_tree(X, sorted, yi, classes, w, max_features, max_depth, tree_seed);
  });
  return fp;
}

/// Each tree votes for its leaf's majority class (lowest index on ties).
inline void forest_votes(const ForestParams& p, std::span<const double> x, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (const auto& t : p.trees) out[argmax(t.predict(x))] += 1.0;
  for (double& v : out) v /= static_cast<double>(p.trees.size());
}

// ---------------------------------------------------------------------------
// Gradient boosting (softmax, one regression tree per class per round)
// ---------------------------------------------------------------------------

inline void gbm_scores(const GbmParams& p, std::span<const double> x, std::span<double> out,
                       std::size_t rounds) {
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = p.init[c];
  for (std::size_t r = 0; r < rounds; ++r)
    for (std::size_t c = 0; c < out.size(); ++c)
      out[c] += p.learning_rate * p.rounds[r][c].predict(x)[0];
}

inline GbmParams fit_gbm(const FeatureMatrix& X, const std::vector<int>& yi, std::size_t classes,
                         const ModelSpec& spec) {
  const auto rounds = static_cast<std::size_t>(spec.get("rounds"));
  const double lr = spec.get("learning_rate");
  const auto rw = row_weights(yi, classes, spec.get("class_weight_balanced") != 0.0);
  tree::GrowthParams gp;
  gp.max_leaves = static_cast<std::size_t>(spec.get("max_leaves"));
  gp.min_child_hessian = spec.get("min_child_hessian");
  const double lambda = spec.get("lambda");
  const tree::Presorted sorted(X);
  const std::size_t n = X.rows;

  GbmParams p;
  p.learning_rate = lr;
  // Base score: log of the (weighted) class prior.
  std::vector<double> prior(classes, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    prior[static_cast<std::size_t>(yi[i])] += rw[i];
    total += rw[i];
  }
  for (std::size_t c = 0; c < classes; ++c) p.init.push_back(std::log(prior[c] / total));

  std::vector<double> F(n * classes), prob(n * classes);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < classes; ++c) F[i * classes + c] = p.init[c];
  const std::vector<double> presence(n, 1.0);
  std::vector<std::vector<double>> grad(classes, std::vector<double>(n)),
      hess(classes, std::vector<double>(n));
  for (std::size_t r = 0; r < rounds; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(F.begin() + static_cast<std::ptrdiff_t>(i * classes), classes,
                  prob.begin() + static_cast<std::ptrdiff_t>(i * classes));
      softmax(std::span<double>(prob.data() + i * classes, classes));
      for (std::size_t c = 0; c < classes; ++c) {
        const double pc = prob[i * classes + c];
        grad[c][i] = rw[i] * (pc - (yi[i] == static_cast<int>(c) ? 1.0 : 0.0));
        hess[c][i] = rw[i] * std::max(pc * (1.0 - pc), 1e-16);
      }
    }
    std::vector<tree::FlatTree> round(classes);
    parallel_for(classes, [&](std::size_t c) {
      tree::GradientCriterion crit{grad[c], hess[c], presence, lambda};
      round[c] = tree::grow(X, sorted, presence, crit, gp);
    });
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < classes; ++c)
        F[i * classes + c] += lr * round[c].predict(X.row(i))[0];
    p.rounds.push_back(std::move(round));
  }
  return p;
}

}  // namespace model_detail

// ---------------------------------------------------------------------------
// Public API
// ---------------------------------------------------------------------------

/// Fits `spec` on standardized features X with labels y. Deterministic for a
/// fixed spec (including seed) and data.
inline TrainedModel train(const ModelSpec& spec, const FeatureMatrix& X, std::span<const int> y) {
  model_detail::validate_training(X, y);
  for (const auto& [name, value] : spec.hyperparams) (void)spec.get(name);
  TrainedModel m;
  m.spec = spec;
  m.feature_names = X.names;
  const auto yi = model_detail::encode(y, m.classes);
  const std::size_t C = m.classes.size();
  switch (spec.kind) {
    case ModelKind::logreg: m.params = model_detail::fit_logreg(X, yi, C, spec); break;
    case ModelKind::knn: {
      KnnParams p;
      p.k = static_cast<std::size_t>(spec.get("k"));
      if (p.k == 0) throw InvalidArgument("knn needs k >= 1");
      p.features = X.cols;
      p.points = X.values;
      p.labels = yi;
      p.class_weight.assign(C, 1.0);
      if (spec.get("class_weight_balanced") != 0.0) {
        std::vector<double> count(C, 0.0);
        for (int c : yi) count[static_cast<std::size_t>(c)] += 1.0;
        for (std::size_t c = 0; c < C; ++c)
          p.class_weight[c] = static_cast<double>(yi.size()) / (static_cast<double>(C) * count[c]);
      }
      m.params = std::move(p);
      break;
    }
    case ModelKind::random_forest: m.params = model_detail::fit_forest(X, yi, C, spec); break;
    case ModelKind::gbm: m.params = model_detail::fit_gbm(X, yi, C, spec); break;
  }
  return m;
}

inline TrainedModel train(const ModelSpec& spec, const FeatureMatrix& X, const std::vector<int>& y) {
  return train(spec, X, std::span<const int>(y));
}

/// Single decision tree (Gini, all features, no bootstrap), packaged as a
/// one-tree forest.
inline TrainedModel train_decision_tree(const FeatureMatrix& X, std::span<const int> y,
                                        std::size_t max_depth = 0) {
  model_detail::validate_training(X, y);
  TrainedModel m;
  m.spec.kind = ModelKind::random_forest;
  m.spec.hyperparams = {{"trees", 1}, {"bootstrap", 0}, {"max_features", -1},
                        {"max_depth", static_cast<double>(max_depth)}};
  m.feature_names = X.names;
  const auto yi = model_detail::encode(y, m.classes);
  const tree::Presorted sorted(X);
  const std::vector<double> w(X.rows, 1.0);
  ForestParams fp;
  fp.trees.push_back(
      model_detail::fit_tree(X, sorted, yi, m.classes.size(), w, 0, max_depth, 0));
  m.params = std::move(fp);
  return m;
}

/// Class probabilities for one row, written to `out` (size = class count).
/// Callers that evaluate many rows should reuse `out`.
inline void predict_proba_row(const TrainedModel& m, std::span<const double> x, std::span<double> out) {
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, LogRegParams>) {
          model_detail::logreg_scores(p, x, out);
          model_detail::softmax(out);
        } else if constexpr (std::is_same_v<P, KnnParams>) {
          thread_local std::vector<std::pair<double, std::size_t>> scratch;
          model_detail::knn_votes(p, x, out, scratch);
        } else if constexpr (std::is_same_v<P, ForestParams>) {
          model_detail::forest_votes(p, x, out);
        } else {
          model_detail::gbm_scores(p, x, out, p.rounds.size());
          model_detail::softmax(out);
        }
      },
      m.params);
}

/// Row-major rows x classes probability matrix; each row sums to 1.
struct ProbaMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
};

inline ProbaMatrix predict_proba(const TrainedModel& m, const FeatureMatrix& X) {
  model_detail::validate_columns(m, X);
  ProbaMatrix out{X.rows, m.class_count(), std::vector<double>(X.rows * m.class_count())};
  parallel_for(X.rows, [&](std::size_t r) {
    predict_proba_row(m, X.row(r), std::span<double>(out.values.data() + r * out.cols, out.cols));
  });
  return out;
}

/// Predicted labels; ties resolve to the lowest class index. Logistic
/// regression and boosting take the argmax of raw scores, which matches the
/// argmax of their probabilities.
inline std::vector<int> predict(const TrainedModel& m, const FeatureMatrix& X) {
  model_detail::validate_columns(m, X);
  std::vector<int> out(X.rows);
  parallel_for(X.rows, [&](std::size_t r) {
    std::vector<double> buf(m.class_count());
    std::visit(
        [&](const auto& p) {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, LogRegParams>) model_detail::logreg_scores(p, X.row(r), buf);
          else if constexpr (std::is_same_v<P, GbmParams>)
            model_detail::gbm_scores(p, X.row(r), buf, p.rounds.size());
          else predict_proba_row(m, X.row(r), buf);
        },
        m.params);
    out[r] = m.classes[model_detail::argmax(buf)];
  });
  return out;
}

/// Mean multinomial log-loss of the boosting model after each round
/// (index 0 = base score only). Only defined for gbm models.
inline std::vector<double> staged_log_loss(const TrainedModel& m, const FeatureMatrix& X,
                                           std::span<const int> y) {
  const auto* p = std::get_if<GbmParams>(&m.params);
  if (!p) throw InvalidArgument("staged_log_loss requires a gbm model");
  model_detail::validate_columns(m, X);
  const std::size_t C = m.class_count();
  std::vector<double> F(X.rows * C);
  for (std::size_t i = 0; i < X.rows; ++i)
    for (std::size_t c = 0; c < C; ++c) F[i * C + c] = p->init[c];
  auto loss = [&] {
    double total = 0.0;
    std::vector<double> z(C);
    for (std::size_t i = 0; i < X.rows; ++i) {
      std::copy_n(F.begin() + static_cast<std::ptrdiff_t>(i * C), C, z.begin());
      model_detail::softmax(z);
      const auto c = static_cast<std::size_t>(
          std::lower_bound(m.classes.begin(), m.classes.end(), y[i]) - m.classes.begin());
      total -= std::log(std::max(z[c], 1e-300));
    }
    return total / static_cast<double>(X.rows);
  };
  std::vector<double> out{loss()};
  for (const auto& round : p->rounds) {
    for (std::size_t i = 0; i < X.rows; ++i)
      for (std::size_t c = 0; c < C; ++c) F[i * C + c] += p->learning_rate * round[c].predict(X.row(i))[0];
    out.push_back(loss());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization (versioned JSON)
// ---------------------------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

inline io::json model_to_json(const TrainedModel& m) {
  io::json j = {{"format_version", kModelFormatVersion},
                {"spec", m.spec.to_json()},
                {"classes", m.classes},
                {"feature_names", m.feature_names}};
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, LogRegParams>) {
          j["params"] = {{"classes", p.classes},     {"features", p.features},
                         {"weights", p.weights},     {"bias", p.bias},
                         {"iterations", p.iterations}, {"gradient_norm", p.gradient_norm},
                         {"converged", p.converged}};
        } else if constexpr (std::is_same_v<P, KnnParams>) {
          j["params"] = {{"k", p.k},           {"features", p.features},
                         {"points", p.points}, {"labels", p.labels},
                         {"class_weight", p.class_weight}};
        } else if constexpr (std::is_same_v<P, ForestParams>) {
          io::json trees = io::json::array();
          for (const auto& t : p.trees) trees.push_back(tree::to_json(t));
          j["params"] = {{"trees", trees}};
        } else {
          io::json rounds = io::json::array();
          for (const auto& round : p.rounds) {
            io::json r = io::json::array();
            for (const auto& t : round) r.push_back(tree::to_json(t));
            rounds.push_back(r);
          }
          j["params"] = {{"learning_rate", p.learning_rate}, {"init", p.init}, {"rounds", rounds}};
        }
      },
      m.params);
  return j;
}

inline TrainedModel model_from_json(const io::json& j) {
  if (j.value("format_version", 0) != kModelFormatVersion)
    throw ValidationError("unsupported model format version");
  TrainedModel m;
  m.spec = ModelSpec::from_json(j.at("spec"));
  m.classes = j.at("classes").get<std::vector<int>>();
  m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  const auto& p = j.at("params");
  switch (m.spec.kind) {
    case ModelKind::logreg: {
      LogRegParams lp;
      lp.classes = p.at("classes");
      lp.features = p.at("features");
      lp.weights = p.at("weights").get<std::vector<double>>();
      lp.bias = p.at("bias").get<std::vector<double>>();
      lp.iterations = p.at("iterations");
      lp.gradient_norm = p.at("gradient_norm");
      lp.converged = p.at("converged");
      m.params = std::move(lp);
      break;
    }
    case ModelKind::knn: {
      KnnParams kp;
      kp.k = p.at("k");
      kp.features = p.at("features");
      kp.points = p.at("points").get<std::vector<double>>();
      kp.labels = p.at("labels").get<std::vector<int>>();
      kp.class_weight = p.at("class_weight").get<std::vector<double>>();
      m.params = std::move(kp);
      break;
    }
    case ModelKind::random_forest: {
      ForestParams fp;
      for (const auto& t : p.at("trees")) fp.trees.push_back(tree::from_json(t));
      m.params = std::move(fp);
      break;
    }
    case ModelKind::gbm: {
      GbmParams gp;
      gp.learning_rate = p.at("learning_rate");
      gp.init = p.at("init").get<std::vector<double>>();
      for (const auto& r : p.at("rounds")) {
        std::vector<tree::FlatTree> round;
        for (const auto& t : r) round.push_back(tree::from_json(t));
        gp.rounds.push_back(std::move(round));
      }
      m.params = std::move(gp);
      break;
    }
  }
  return m;
}

}  // namespace keynode
