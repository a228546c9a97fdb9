#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "keynode/models.hpp"

using namespace keynode;

namespace {

struct Dataset {
  FeatureMatrix X;
  std::vector<int> y;
};

// Gaussian blobs centred at +-centre on every axis (class 0 negative).
Dataset blobs(std::size_t per_class, std::size_t dims, double centre, std::uint64_t seed) {
  Xoshiro256 rng(seed);
  std::vector<std::string> names;
  for (std::size_t d = 0; d < dims; ++d) names.push_back("f" + std::to_string(d));
  Dataset ds{FeatureMatrix(names, 2 * per_class), {}};
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int label = i < per_class ? 0 : 1;
    for (std::size_t d = 0; d < dims; ++d) {
      // Box–Muller for a standard normal.
      const double u1 = std::max(rng.uniform(), 1e-300), u2 = rng.uniform();
      const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
      ds.X.at(i, d) = (label == 0 ? -centre : centre) + 0.5 * z;
    }
    ds.y.push_back(label);
  }
  return ds;
}

// Three noiseless classes from thresholds on a sum of features.
Dataset staircase(std::size_t n, std::uint64_t seed) {
  Xoshiro256 rng(seed);
  Dataset ds{FeatureMatrix({"a", "b", "c"}, n), {}};
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t d = 0; d < 3; ++d) {
      ds.X.at(i, d) = rng.uniform() * 2 - 1;
      s += ds.X.at(i, d) * static_cast<double>(d + 1);
    }
    ds.y.push_back(s < -0.5 ? 0 : s < 0.7 ? 1 : 2);
  }
  return ds;
}

double accuracy(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < a.size(); ++i) hit += a[i] == b[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(a.size());
}

ModelSpec spec(ModelKind kind, std::map<std::string, double> hp = {}, std::uint64_t seed = 1) {
  return ModelSpec{kind, std::move(hp), seed};
}

}  // namespace

TEST(Training, LogRegSeparableBlobs) {
  const auto ds = blobs(50, 2, 2.0, 1);
  const auto m = train(spec(ModelKind::logreg), ds.X, ds.y);
  EXPECT_GE(accuracy(predict(m, ds.X), ds.y), 0.99);
  EXPECT_TRUE(std::get<LogRegParams>(m.params).converged);
}

TEST(Training, GbmFitsNoiselessData) {
  const auto ds = staircase(50, 3);
  const auto m = train(spec(ModelKind::gbm, {{"rounds", 100}}), ds.X, ds.y);
  EXPECT_EQ(accuracy(predict(m, ds.X), ds.y), 1.0);
}

TEST(Training, KnnOneNeighbourMemorizes) {
  const auto ds = staircase(80, 4);
  const auto m = train(spec(ModelKind::knn, {{"k", 1}}), ds.X, ds.y);
  EXPECT_EQ(predict(m, ds.X), ds.y);
}

TEST(Training, ForestFitsBlobs) {
  const auto ds = blobs(60, 3, 1.5, 2);
  const auto m = train(spec(ModelKind::random_forest, {{"trees", 25}}), ds.X, ds.y);
  EXPECT_GE(accuracy(predict(m, ds.X), ds.y), 0.99);
}

TEST(Training, SingleClassRejected) {
  auto ds = blobs(5, 2, 1.0, 1);
  std::fill(ds.y.begin(), ds.y.end(), 1);
  EXPECT_THROW(train(spec(ModelKind::logreg), ds.X, ds.y), TrainingError);
}

TEST(Training, UnknownHyperparameterRejected) {
  const auto ds = blobs(5, 2, 1.0, 1);
  EXPECT_THROW(train(spec(ModelKind::knn, {{"trees", 3}}), ds.X, ds.y), InvalidArgument);
}

TEST(Training, NonFiniteRejected) {
  auto ds = blobs(5, 2, 1.0, 1);
  ds.X.at(0, 0) = std::nan("");
  EXPECT_THROW(train(spec(ModelKind::gbm), ds.X, ds.y), ValidationError);
}

TEST(Training, LabelsNeedNotBeContiguous) {
  auto ds = blobs(20, 2, 2.0, 5);
  for (int& v : ds.y) v = v == 0 ? 3 : 7;
  const auto m = train(spec(ModelKind::gbm, {{"rounds", 20}}), ds.X, ds.y);
  EXPECT_EQ(m.classes, (std::vector<int>{3, 7}));
  for (int p : predict(m, ds.X)) EXPECT_TRUE(p == 3 || p == 7);
}

TEST(Prediction, ZeroWeightLogRegPicksLowestClass) {
  TrainedModel m;
  m.spec = spec(ModelKind::logreg);
  m.classes = {0, 1, 2};
  m.feature_names = {"a", "b", "c"};
  LogRegParams p;
  p.classes = 3;
  p.features = 3;
  p.weights.assign(9, 0.0);
  p.bias.assign(3, 0.0);
  m.params = p;
  const auto ds = staircase(30, 1);
  for (int label : predict(m, ds.X)) EXPECT_EQ(label, 0);
}

TEST(Prediction, ProbabilitiesSumToOne) {
  const auto ds = staircase(120, 6);
  for (auto kind : {ModelKind::logreg, ModelKind::knn, ModelKind::random_forest, ModelKind::gbm}) {
    const auto m = train(spec(kind, kind == ModelKind::random_forest ? std::map<std::string, double>{{"trees", 10}} : std::map<std::string, double>{}), ds.X, ds.y);
    const auto P = predict_proba(m, ds.X);
    for (std::size_t r = 0; r < P.rows; ++r) {
      const auto row = P.row(r);
      EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12) << to_string(kind);
      for (double v : row) EXPECT_GE(v, 0.0);
    }
  }
}

TEST(Prediction, SymmetricMidpointIsEven) {
  // Mirror every point of class 0 to build class 1, so the fit is symmetric.
  const auto base = blobs(40, 2, 1.0, 9);
  FeatureMatrix X({"f0", "f1"}, 80);
  std::vector<int> y;
  for (std::size_t i = 0; i < 40; ++i) {
    X.at(i, 0) = base.X.at(i, 0);
    X.at(i, 1) = base.X.at(i, 1);
    X.at(40 + i, 0) = -base.X.at(i, 0);
    X.at(40 + i, 1) = -base.X.at(i, 1);
  }
  y.assign(40, 0);
  y.insert(y.end(), 40, 1);
  const auto m = train(spec(ModelKind::logreg), X, y);
  std::vector<double> proba(2);
  const std::vector<double> origin{0.0, 0.0};
  predict_proba_row(m, origin, proba);
  EXPECT_NEAR(proba[0], 0.5, 1e-3);
  EXPECT_NEAR(proba[1], 0.5, 1e-3);
}

TEST(Prediction, IdenticalTreesVoteUnanimously) {
  const auto ds = staircase(100, 2);
  const auto m = train(spec(ModelKind::random_forest, {{"trees", 5}, {"bootstrap", 0}, {"max_features", -1}}), ds.X, ds.y);
  const auto P = predict_proba(m, ds.X);
  for (double v : P.values) EXPECT_TRUE(v == 0.0 || v == 1.0);
}

TEST(Prediction, OneTreeForestEqualsDecisionTree) {
  const auto ds = staircase(150, 8);
  const auto forest = train(spec(ModelKind::random_forest, {{"trees", 1}, {"bootstrap", 0}, {"max_features", -1}}), ds.X, ds.y);
  const auto tree = train_decision_tree(ds.X, ds.y);
  const auto probe = staircase(200, 99);
  EXPECT_EQ(predict(forest, probe.X), predict(tree, probe.X));
  EXPECT_EQ(predict_proba(forest, probe.X).values, predict_proba(tree, probe.X).values);
}

TEST(Prediction, ColumnMismatchRejected) {
  const auto ds = staircase(30, 1);
  const auto m = train(spec(ModelKind::knn), ds.X, ds.y);
  EXPECT_THROW(predict(m, FeatureMatrix({"x", "y", "z"}, 3)), ValidationError);
}

TEST(Gbm, StagedLossNonIncreasing) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto ds = staircase(200, seed);
    const auto m = train(spec(ModelKind::gbm, {{"rounds", 60}}), ds.X, ds.y);
    const auto loss = staged_log_loss(m, ds.X, ds.y);
    ASSERT_EQ(loss.size(), 61u);
    for (std::size_t r = 1; r < loss.size(); ++r) EXPECT_LE(loss[r], loss[r - 1] + 1e-12) << "round " << r;
  }
}

TEST(Gbm, StagedLossNeedsGbm) {
  const auto ds = staircase(30, 1);
  EXPECT_THROW(staged_log_loss(train(spec(ModelKind::knn), ds.X, ds.y), ds.X, ds.y), InvalidArgument);
}

TEST(LogReg, GradientMatchesFiniteDifferences) {
  Xoshiro256 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 15, d = 4, C = 3;
    FeatureMatrix X({"a", "b", "c", "d"}, n);
    for (double& v : X.values) v = rng.uniform() * 4 - 2;
    std::vector<int> y(n);
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng.below(C));
      w[i] = 0.5 + rng.uniform();
    }
    std::vector<double> theta(C * d + C), grad(theta.size()), scratch(theta.size());
    for (double& t : theta) t = rng.uniform() - 0.5;
    const double l2 = 0.01 * (trial % 3);
    logreg_loss_grad(X, y, w, C, l2, theta, grad);
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double h = 1e-5;
      auto tp = theta, tm = theta;
      tp[j] += h;
      tm[j] -= h;
      const double fd = (logreg_loss_grad(X, y, w, C, l2, tp, scratch) - logreg_loss_grad(X, y, w, C, l2, tm, scratch)) / (2 * h);
      EXPECT_LE(std::abs(fd - grad[j]), 1e-5 * std::max(1.0, std::abs(grad[j]))) << "trial " << trial << " j " << j;
    }
  }
}

TEST(Determinism, SameSpecSameModel) {
  const auto ds = staircase(150, 5);
  for (auto kind : {ModelKind::logreg, ModelKind::knn, ModelKind::random_forest, ModelKind::gbm}) {
    const auto s = spec(kind, kind == ModelKind::random_forest ? std::map<std::string, double>{{"trees", 15}} : std::map<std::string, double>{}, 7);
    EXPECT_EQ(model_to_json(train(s, ds.X, ds.y)).dump(), model_to_json(train(s, ds.X, ds.y)).dump()) << to_string(kind);
  }
}

TEST(Determinism, ForestIndependentOfThreads) {
  const auto ds = staircase(150, 5);
  const auto s = spec(ModelKind::random_forest, {{"trees", 12}}, 3);
  set_thread_count(1);
  const auto a = model_to_json(train(s, ds.X, ds.y)).dump();
  set_thread_count(4);
  const auto b = model_to_json(train(s, ds.X, ds.y)).dump();
  set_thread_count(0);
  EXPECT_EQ(a, b);
}

TEST(Serialization, RoundTripPredictsIdentically) {
  const auto ds = staircase(120, 11);
  const auto probe = staircase(60, 12);
  for (auto kind : {ModelKind::logreg, ModelKind::knn, ModelKind::random_forest, ModelKind::gbm}) {
    const auto m = train(spec(kind), ds.X, ds.y);
    const auto j = model_to_json(m);
    EXPECT_EQ(j.at("format_version"), kModelFormatVersion);
    const auto back = model_from_json(io::json::parse(j.dump()));
    EXPECT_EQ(predict_proba(back, probe.X).values, predict_proba(m, probe.X).values) << to_string(kind);
    EXPECT_EQ(model_to_json(back).dump(), j.dump());
  }
}

TEST(Serialization, WrongVersionRejected) {
  const auto ds = staircase(30, 1);
  auto j = model_to_json(train(spec(ModelKind::knn), ds.X, ds.y));
  j["format_version"] = 99;
  EXPECT_ANY_THROW(model_from_json(j));
}

TEST(Spec, JsonAndParsing) {
  const auto s = spec(ModelKind::gbm, {{"rounds", 5}}, 9);
  const auto back = ModelSpec::from_json(s.to_json());
  EXPECT_EQ(back.kind, ModelKind::gbm);
  EXPECT_EQ(back.get("rounds"), 5);
  EXPECT_EQ(back.get("learning_rate"), 0.1);
  EXPECT_EQ(back.seed, 9u);
  EXPECT_EQ(parse_model_kind("random_forest"), ModelKind::random_forest);
  EXPECT_THROW(parse_model_kind("svm"), InvalidArgument);
}
