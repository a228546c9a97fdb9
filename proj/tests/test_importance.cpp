#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "keynode/importance.hpp"

using namespace keynode;

namespace {

FeatureMatrix matrix(std::vector<std::string> names, const std::vector<std::vector<double>>& rows) {
  FeatureMatrix m(std::move(names), rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < m.cols; ++c) m.at(r, c) = rows[r][c];
  return m;
}

// Exact Shapley values against one background row by enumerating every
// permutation of the features.
template <typename F>
std::vector<double> exact_shapley(F&& f, const std::vector<double>& x, std::span<const double> b) {
  const std::size_t d = x.size();
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> phi(d, 0.0);
  double count = 0;
  do {
    std::vector<double> z(b.begin(), b.end());
    for (auto i : order) {
      const double before = f(std::span<const double>(z));
      z[i] = x[i];
      phi[i] += f(std::span<const double>(z)) - before;
    }
    ++count;
  } while (std::next_permutation(order.begin(), order.end()));
  for (double& p : phi) p /= count;
  return phi;
}

double interaction(std::span<const double> z) { return z[0] * z[1] + 2.0 * z[2] - z[0] * z[2] * z[3]; }

}  // namespace

TEST(Shapley, LinearScorerClosedForm) {
  const std::vector<double> w{1.5, -2.0, 0.25};
  auto f = [&](std::span<const double> z) { return w[0] * z[0] + w[1] * z[1] + w[2] * z[2] + 3.0; };
  const std::vector<double> x{1.0, 2.0, -4.0};
  const auto bg = matrix({"a", "b", "c"}, {{0.5, -1.0, 2.0}});
  const auto est = shapley_sample(f, x, bg, 7, 1);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(est.values[i], (x[i] - bg.at(0, i)) * w[i], 1e-12);
  for (double se : est.standard_error) EXPECT_NEAR(se, 0.0, 1e-12);
}

TEST(Shapley, EfficiencyPerSample) {
  const auto bg = matrix({"a", "b", "c", "d"}, {{0, 1, 2, 3}, {-1, 0.5, 0, 2}, {3, 3, -2, 1}});
  const std::vector<double> x{1.0, -2.0, 0.5, 4.0};
  for (std::size_t perms : {1u, 5u, 64u}) {
    const auto est = shapley_sample(interaction, x, bg, perms, 9 + perms);
    const double sum = std::accumulate(est.values.begin(), est.values.end(), 0.0);
    EXPECT_NEAR(sum, est.f_x - est.f_background_mean, 1e-12);
    EXPECT_DOUBLE_EQ(est.f_x, interaction(x));
    EXPECT_EQ(est.permutations, perms);
  }
}

TEST(Shapley, SingleBackgroundConvergesToExact) {
  const auto bg = matrix({"a", "b", "c", "d"}, {{0.3, 1.0, -2.0, 0.5}});
  const std::vector<double> x{1.0, -2.0, 0.5, 4.0};
  const auto exact = exact_shapley(interaction, x, bg.row(0));
  const auto est = shapley_sample(interaction, x, bg, 4000, 3);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_GT(est.standard_error[i], 0.0);
    EXPECT_NEAR(est.values[i], exact[i], 4.0 * est.standard_error[i] + 1e-12) << "feature " << i;
  }
}

TEST(Shapley, BackgroundAverageConvergesToExact) {
  const auto bg = matrix({"a", "b", "c", "d"}, {{0, 1, 2, 3}, {-1, 0.5, 0, 2}, {3, 3, -2, 1}});
  const std::vector<double> x{1.0, -2.0, 0.5, 4.0};
  std::vector<double> expected(4, 0.0);
  for (std::size_t r = 0; r < bg.rows; ++r) {
    const auto e = exact_shapley(interaction, x, bg.row(r));
    for (std::size_t i = 0; i < 4; ++i) expected[i] += e[i] / static_cast<double>(bg.rows);
  }
  const auto est = shapley_sample(interaction, x, bg, 6000, 5);
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_NEAR(est.values[i], expected[i], 4.0 * est.standard_error[i]) << "feature " << i;
}

TEST(Shapley, DummyFeatureIsExactlyZero) {
  auto f = [](std::span<const double> z) { return std::sin(z[0]) * z[2] + z[0] * z[0]; };
  const auto bg = matrix({"a", "b", "c"}, {{0, 5, 1}, {1, -5, 2}, {2, 7, -1}});
  const auto est = shapley_sample(f, std::vector<double>{0.4, 100.0, 3.0}, bg, 50, 2);
  EXPECT_EQ(est.values[1], 0.0);
  EXPECT_EQ(est.standard_error[1], 0.0);
}

TEST(Shapley, ConstantScorerGivesZero) {
  auto f = [](std::span<const double>) { return 0.7; };
  const auto bg = matrix({"a", "b"}, {{0, 1}, {2, 3}});
  const auto est = shapley_sample(f, std::vector<double>{5, 6}, bg, 20, 1);
  for (double v : est.values) EXPECT_EQ(v, 0.0);
}

TEST(Shapley, SymmetricFeaturesShareCredit) {
  // f depends on a and b only through a + b, and x, b agree on both.
  auto f = [](std::span<const double> z) { return std::exp(0.3 * (z[0] + z[1])) + z[2]; };
  const auto bg = matrix({"a", "b", "c"}, {{0, 0, 0}});
  const std::vector<double> x{1.0, 1.0, 2.0};
  const auto exact = exact_shapley(f, x, bg.row(0));
  EXPECT_NEAR(exact[0], exact[1], 1e-12);
  const auto est = shapley_sample(f, x, bg, 3000, 4);
  EXPECT_NEAR(est.values[0], est.values[1], 4.0 * (est.standard_error[0] + est.standard_error[1]));
}

TEST(Shapley, DeterministicForSeed) {
  const auto bg = matrix({"a", "b", "c", "d"}, {{0, 1, 2, 3}, {-1, 0.5, 0, 2}});
  const std::vector<double> x{1.0, -2.0, 0.5, 4.0};
  EXPECT_EQ(shapley_sample(interaction, x, bg, 30, 8).values, shapley_sample(interaction, x, bg, 30, 8).values);
}

TEST(Shapley, InvalidArguments) {
  const auto bg = matrix({"a", "b"}, {{0, 1}});
  EXPECT_THROW(shapley_sample(interaction, std::vector<double>{1, 2}, bg, 0, 1), InvalidArgument);
  EXPECT_THROW(shapley_sample(interaction, std::vector<double>{1, 2, 3}, bg, 5, 1), ValidationError);
  EXPECT_THROW(shapley_sample(interaction, std::vector<double>{1, 2}, FeatureMatrix({"a", "b"}, 0), 5, 1),
               InvalidArgument);
}

namespace {

// Labels driven strongly by "strong", weakly by "weak", not at all by "noise".
struct Fixture {
  FeatureMatrix X{{"strong", "weak", "noise"}, 400};
  std::vector<int> y;
  Fixture() {
    Xoshiro256 rng(21);
    for (std::size_t i = 0; i < X.rows; ++i) {
      for (std::size_t c = 0; c < 3; ++c) X.at(i, c) = rng.uniform() * 2 - 1;
      y.push_back(3.0 * X.at(i, 0) + 0.6 * X.at(i, 1) > 0 ? 1 : 0);
    }
  }
};

}  // namespace

TEST(Report, RanksByInfluence) {
  Fixture fx;
  const auto m = train(ModelSpec{ModelKind::logreg, {}, 1}, fx.X, fx.y);
  ImportanceOptions o;
  o.sample_size = 80;
  o.permutations = 60;
  o.background_size = 50;
  o.seed = 3;
  const auto rep = importance_report(m, fx.X, o);
  EXPECT_EQ(rep.ranking(), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(rep.rank_of("strong"), 1u);
  EXPECT_EQ(rep.rank_of("noise"), 3u);
  EXPECT_THROW(rep.rank_of("missing"), ValidationError);
  EXPECT_EQ(rep.samples_used, 80u);
  EXPECT_EQ(rep.background_size, 50u);
  EXPECT_EQ(rep.ranked_csv().rfind("feature,mean_abs_shapley\nstrong,", 0), 0u);

  const auto again = importance_report(m, fx.X, o);
  EXPECT_EQ(rep.to_json().dump(), again.to_json().dump());
  set_thread_count(1);
  EXPECT_EQ(importance_report(m, fx.X, o).mean_abs_shapley, rep.mean_abs_shapley);
  set_thread_count(0);
}

TEST(Report, ModelTargetIsPredictedClassProbability) {
  Fixture fx;
  const auto m = train(ModelSpec{ModelKind::logreg, {}, 1}, fx.X, fx.y);
  const auto bg = fx.X.select_rows({0, 1, 2, 3, 4});
  const auto x = fx.X.row(10);
  const auto est = shapley_sample(m, x, bg, 10, 1);
  std::vector<double> proba(m.class_count());
  predict_proba_row(m, x, proba);
  EXPECT_NEAR(est.f_x, *std::max_element(proba.begin(), proba.end()), 1e-15);
}

TEST(Report, KeepsPerSampleWhenAsked) {
  Fixture fx;
  const auto m = train(ModelSpec{ModelKind::logreg, {}, 1}, fx.X, fx.y);
  ImportanceOptions o;
  o.sample_size = 5;
  o.permutations = 10;
  o.background_size = 10;
  o.keep_per_sample = true;
  const auto rep = importance_report(m, fx.X, o);
  ASSERT_EQ(rep.per_sample_shapley.size(), 5u);
  for (std::size_t f = 0; f < 3; ++f) {
    double s = 0;
    for (const auto& v : rep.per_sample_shapley) s += std::abs(v[f]);
    EXPECT_NEAR(s / 5.0, rep.mean_abs_shapley[f], 1e-12);
  }
}

TEST(Report, RejectsMismatchedInput) {
  Fixture fx;
  const auto m = train(ModelSpec{ModelKind::logreg, {}, 1}, fx.X, fx.y);
  ImportanceOptions o;
  o.sample_size = 0;
  EXPECT_THROW(importance_report(m, fx.X, o), InvalidArgument);
  o.sample_size = 10;
  EXPECT_THROW(importance_report(m, FeatureMatrix({"x", "y", "z"}, 10), o), ValidationError);
}
