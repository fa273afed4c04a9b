#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>
#include <iterator>
#include <set>

#include "coverbias/boosting.hpp"
#include "test_support.hpp"

using namespace coverbias;
using namespace coverbias::boosting;

namespace {

Dataset one_feature(const std::vector<double>& x, const std::vector<double>& y) {
  Dataset d;
  d.feature_names = {"x"};
  for (std::size_t i = 0; i < x.size(); ++i) d.add("r" + std::to_string(i), std::span<const double>(&x[i], 1), y[i]);
  return d;
}

}  // namespace

TEST(SplitTrainTest, Sizes) {
  auto d10 = coverbias::testing::random_dataset(10, 2, 1);
  auto [tr, te] = split_train_test(d10, 0.8, 3);
  EXPECT_EQ(tr.size(), 8u);
  EXPECT_EQ(te.size(), 2u);
  EXPECT_THROW(split_train_test(coverbias::testing::random_dataset(9, 2, 1), 0.8, 3), DomainError);
}

TEST(SplitTrainTest, DeterministicAndPartition) {
  auto d = coverbias::testing::random_dataset(374, 3, 2);
  auto [tr, te] = split_train_test(d, 0.8, 42);
  auto [tr2, te2] = split_train_test(d, 0.8, 42);
  EXPECT_EQ(tr.ids, tr2.ids);
  EXPECT_EQ(te.ids, te2.ids);
  EXPECT_EQ(tr.size(), 300u);
  EXPECT_EQ(te.size(), 74u);
  std::set<std::string> a(tr.ids.begin(), tr.ids.end()), b(te.ids.begin(), te.ids.end()), all(d.ids.begin(), d.ids.end()),
      uni, inter;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::inserter(uni, uni.end()));
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(inter, inter.end()));
  EXPECT_EQ(uni, all);
  EXPECT_TRUE(inter.empty());
  auto [tr3, te3] = split_train_test(d, 0.8, 43);
  EXPECT_NE(tr.ids, tr3.ids);
}

TEST(Fit, ConstantTarget) {
  auto d = one_feature({1, 2, 3, 4, 5, 6}, {7.25, 7.25, 7.25, 7.25, 7.25, 7.25});
  FitTrace trace;
  auto m = fit(d, BoostParams{}, &trace);
  EXPECT_EQ(m.base_prediction, 7.25);
  for (const auto& t : m.trees)
    for (const auto& n : t.nodes) {
      if (!n.is_leaf()) continue;
      EXPECT_EQ(n.value, 0.0);
    }
  EXPECT_EQ(trace.train_rmse.back(), 0.0);
}

TEST(Fit, SingleStumpHandTrace) {
  auto d = one_feature({0, 0, 1, 1}, {0, 0, 1, 1});
  BoostParams p;
  p.max_depth = 1;
  p.learning_rate = 1.0;
  p.lambda_l2 = 0.0;
  p.n_rounds = 1;
  auto m = fit(d, p);
  ASSERT_EQ(m.trees.size(), 1u);
  const auto& t = m.trees[0];
  ASSERT_EQ(t.nodes.size(), 3u);
  EXPECT_EQ(t.nodes[0].feature, 0);
  EXPECT_EQ(t.nodes[0].threshold, 0.5);
  // base 0.5; residual gradients +0.5 left, -0.5 right; leaf = -G/H.
  EXPECT_EQ(t.nodes[t.nodes[0].left].value, -0.5);
  EXPECT_EQ(t.nodes[t.nodes[0].right].value, 0.5);
  EXPECT_EQ(t.nodes[0].cover, 4.0);
  std::vector<double> x0{0.2}, x1{0.7};
  EXPECT_EQ(m.predict(x0), 0.0);
  EXPECT_EQ(m.predict(x1), 1.0);
  EXPECT_EQ(evaluate(m, d).rmse, 0.0);
}

TEST(Fit, LeafWeightWithRegularization) {
  // Residual sums G_left = 2 (two rows at +1), lambda = 1, alpha = 0.5:
  // leaf = -(2 - 0.5) / (2 + 1) = -0.5.
  auto d = one_feature({0, 0, 1, 1}, {-1, -1, 1, 1});
  BoostParams p;
  p.max_depth = 1;
  p.learning_rate = 1.0;
  p.lambda_l2 = 1.0;
  p.alpha_l1 = 0.5;
  p.n_rounds = 1;
  auto m = fit(d, p);
  const auto& t = m.trees[0];
  EXPECT_DOUBLE_EQ(t.nodes[t.nodes[0].left].value, -0.5);
  EXPECT_DOUBLE_EQ(t.nodes[t.nodes[0].right].value, 0.5);
  EXPECT_EQ(boosting::detail::soft_threshold(-3.0, 1.0), -2.0);
  EXPECT_EQ(boosting::detail::soft_threshold(0.4, 1.0), 0.0);
}

TEST(Fit, TieBreakLowestFeatureThenThreshold) {
  // Two identical features: the split must use feature 0.
  Dataset d;
  d.feature_names = {"a", "b"};
  for (int i = 0; i < 8; ++i) {
    double v[2] = {double(i), double(i)};
    d.add("r" + std::to_string(i), v, i < 4 ? 0.0 : 1.0);
  }
  BoostParams p;
  p.max_depth = 1;
  p.n_rounds = 1;
  auto m = fit(d, p);
  EXPECT_EQ(m.trees[0].nodes[0].feature, 0);
  EXPECT_EQ(m.trees[0].nodes[0].threshold, 3.5);
  // Symmetric target: splits at 1.5 and 5.5 tie; the lower threshold wins.
  auto s = one_feature({0, 1, 2, 3, 4, 5, 6, 7}, {0, 0, 1, 1, 1, 1, 0, 0});
  auto ms = fit(s, p);
  EXPECT_EQ(ms.trees[0].nodes[0].threshold, 1.5);
}

TEST(Fit, InterpolationWithUnregularizedDeepTree) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-3, 3);
  Dataset d;
  d.feature_names = {"a", "b", "c"};
  for (int i = 0; i < 40; ++i) {
    double v[3] = {u(gen), u(gen), u(gen)};
    d.add("r" + std::to_string(i), v, u(gen));
  }
  BoostParams p;
  p.learning_rate = 1.0;
  p.lambda_l2 = 0.0;
  p.alpha_l1 = 0.0;
  p.gamma_min_gain = 0.0;
  p.max_depth = 40;
  p.n_rounds = 1;
  auto m = fit(d, p);
  auto pred = m.predict(d);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(pred[i], d.y[i], 1e-12);
}

TEST(Fit, TrainRmseNonIncreasing) {
  auto d = coverbias::testing::random_dataset(300, 4, 7);
  for (double eta : {0.05, 0.3, 1.0}) {
    BoostParams p;
    p.learning_rate = eta;
    p.n_rounds = 60;
    FitTrace trace;
    auto m = fit(d, p, &trace);
    ASSERT_EQ(trace.train_rmse.size(), 60u);
    for (std::size_t k = 1; k < trace.train_rmse.size(); ++k)
      EXPECT_LE(trace.train_rmse[k], trace.train_rmse[k - 1] + 1e-12) << "eta " << eta << " round " << k;
    EXPECT_NEAR(evaluate(m, d).rmse, trace.train_rmse.back(), 1e-12);
  }
}

TEST(Fit, DepthBoundAndFiniteLeaves) {
  auto d = coverbias::testing::random_dataset(200, 5, 8);
  for (int depth = 1; depth <= 5; ++depth) {
    BoostParams p;
    p.max_depth = depth;
    p.n_rounds = 10;
    p.subsample = 0.8;
    auto m = fit(d, p);
    for (const auto& t : m.trees) {
      EXPECT_LE(t.depth(), depth);
      for (const auto& n : t.nodes) EXPECT_TRUE(std::isfinite(n.value));
    }
  }
}

TEST(Fit, PredictionIsBasePlusScaledLeafSum) {
  auto d = coverbias::testing::random_dataset(150, 3, 9);
  BoostParams p;
  p.n_rounds = 25;
  auto m = fit(d, p);
  for (std::size_t i = 0; i < d.size(); ++i) {
    double s = 0;
    for (const auto& t : m.trees) {
      int node = 0;
      while (t.nodes[node].feature >= 0)
        node = d.at(i, t.nodes[node].feature) < t.nodes[node].threshold ? t.nodes[node].left : t.nodes[node].right;
      s += t.nodes[node].value;
    }
    EXPECT_EQ(m.predict(d.row(i)), m.base_prediction + p.learning_rate * s);
  }
}

TEST(Fit, MonotoneTransformInvariance) {
  auto d = coverbias::testing::random_dataset(120, 3, 10);
  auto t = d;
  for (std::size_t i = 0; i < t.size(); ++i) t.x[i * 3 + 1] = std::exp(t.x[i * 3 + 1]) * 5.0 - 2.0;
  BoostParams p;
  p.n_rounds = 20;
  p.subsample = 0.8;
  p.seed = 99;
  auto a = fit(d, p).predict(d);
  auto b = fit(t, p).predict(t);
  EXPECT_EQ(a, b);
}

TEST(Fit, SubsampleIsSeeded) {
  auto d = coverbias::testing::random_dataset(100, 3, 11);
  BoostParams p;
  p.subsample = 0.5;
  p.n_rounds = 5;
  p.seed = 1;
  auto a = fit(d, p).predict(d);
  EXPECT_EQ(a, fit(d, p).predict(d));
  p.seed = 2;
  EXPECT_NE(a, fit(d, p).predict(d));
  BoostParams q = p;
  q.seed = 1;
  auto m = fit(d, q);
  EXPECT_EQ(m.trees[0].nodes[0].cover, 50.0);
}

TEST(Fit, Errors) {
  auto d = one_feature({1, 2}, {1, std::nan("")});
  EXPECT_THROW(fit(d, BoostParams{}), DomainError);
  auto one = one_feature({1}, {1});
  EXPECT_THROW(fit(one, BoostParams{}), DomainError);
  BoostParams bad;
  bad.learning_rate = 0;
  EXPECT_THROW(fit(coverbias::testing::random_dataset(10, 1, 1), bad), DomainError);
}

TEST(Predict, EmptyEnsembleAndMismatch) {
  auto d = coverbias::testing::random_dataset(30, 2, 12);
  BoostParams p;
  p.n_rounds = 0;
  auto m = fit(d, p);
  for (double v : m.predict(d)) EXPECT_EQ(v, m.base_prediction);
  std::vector<double> wrong{1.0};
  EXPECT_THROW(m.predict(wrong), SchemaError);
}

TEST(Evaluate, Identities) {
  auto d = one_feature({1, 2, 3, 4}, {2, 4, 6, 12});
  BoostParams p;
  p.n_rounds = 0;
  auto m = fit(d, p);
  // Constant prediction of the mean: RMSE equals the population standard deviation.
  double mean = 6, var = (16 + 4 + 0 + 36) / 4.0;
  EXPECT_EQ(m.base_prediction, mean);
  EXPECT_NEAR(evaluate(m, d).rmse, std::sqrt(var), 1e-15);
}

TEST(Evaluate, MatchesTwoPassOracle) {
  auto d = coverbias::testing::random_dataset(200, 3, 13);
  auto [tr, te] = split_train_test(d, 0.8, 1);
  auto m = fit(tr, BoostParams{});
  auto e = evaluate(m, te);
  long double ss = 0;
  for (std::size_t i = 0; i < te.size(); ++i) {
    long double diff = (long double)m.predict(te.row(i)) - te.y[i];
    ss += diff * diff;
  }
  EXPECT_NEAR(e.rmse, static_cast<double>(std::sqrt(ss / te.size())), 1e-12);
  ASSERT_EQ(e.observed.size(), te.size());
}

TEST(Fit, PlantedLinearSignal) {
  std::mt19937_64 gen(14);
  std::normal_distribution<double> n01(0, 1), noise(0, 0.1);
  Dataset d;
  d.feature_names = {"x1", "x2", "x3"};
  for (int i = 0; i < 2000; ++i) {
    double v[3] = {n01(gen), n01(gen), n01(gen)};
    d.add("r" + std::to_string(i), v, 3 * v[0] + noise(gen));
  }
  auto [tr, te] = split_train_test(d, 0.8, 2);
  auto start = std::chrono::steady_clock::now();
  auto m = fit(tr, BoostParams{});
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_GT(evaluate(m, te).r_squared, 0.9);
  EXPECT_LT(secs, 10.0);
}

TEST(GridSearch, SingleAndDuplicateEntries) {
  auto d = coverbias::testing::random_dataset(60, 2, 15);
  BoostParams p;
  p.n_rounds = 10;
  std::vector<BoostParams> one{p};
  auto r = grid_search_cv(d, one, 5, 1);
  EXPECT_EQ(r.best_index, 0u);
  EXPECT_EQ(r.best_params, p);
  std::vector<BoostParams> dup{p, p, p};
  auto rd = grid_search_cv(d, dup, 5, 1);
  EXPECT_EQ(rd.best_index, 0u);
  EXPECT_EQ(rd.scores[0].mean_rmse, rd.scores[2].mean_rmse);
  std::vector<BoostParams> none;
  EXPECT_THROW(grid_search_cv(d, none, 5, 1), DomainError);
  EXPECT_THROW(grid_search_cv(d, one, 1, 1), DomainError);
}

TEST(GridSearch, FoldsAreBalancedAndShared) {
  auto folds = assign_folds(53, 10, 7);
  std::vector<int> count(10, 0);
  for (auto f : folds) ++count[f];
  for (int c : count) EXPECT_TRUE(c == 5 || c == 6);
  EXPECT_EQ(folds, assign_folds(53, 10, 7));
}

TEST(GridSearch, BetterSettingWinsAcrossSeeds) {
  BoostParams weak, strong;
  weak.n_rounds = 3;
  weak.max_depth = 1;
  weak.learning_rate = 0.05;
  strong.n_rounds = 40;
  strong.max_depth = 3;
  strong.learning_rate = 0.3;
  std::vector<BoostParams> grid{weak, strong};
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto d = coverbias::testing::random_dataset(120, 3, 100 + seed, 0.3);
    if (grid_search_cv(d, grid, 10, seed).best_index == 1) ++wins;
  }
  EXPECT_GE(wins, 18);
}

TEST(GridSearch, DefaultGridShape) {
  auto g = default_grid();
  EXPECT_EQ(g.size(), 72u);
  std::set<double> etas;
  for (const auto& p : g) etas.insert(p.learning_rate);
  EXPECT_EQ(etas, (std::set<double>{0.05, 0.1, 0.3}));
}

TEST(Serialization, EnsembleRoundTrip) {
  auto d = coverbias::testing::random_dataset(80, 3, 16);
  BoostParams p;
  p.n_rounds = 12;
  p.alpha_l1 = 0.25;
  p.subsample = 0.9;
  p.seed = 5;
  auto m = fit(d, p);
  auto text = to_json(m).dump();
  auto back = ensemble_from_json(json::parse(text));
  EXPECT_EQ(back.params, m.params);
  EXPECT_EQ(back.feature_names, m.feature_names);
  EXPECT_EQ(back.predict(d), m.predict(d));
  ASSERT_EQ(back.trees.size(), m.trees.size());
  for (std::size_t t = 0; t < m.trees.size(); ++t) EXPECT_TRUE(back.trees[t].has_cover());
  EXPECT_THROW(ensemble_from_json(json{{"format", "other"}}), SchemaError);
}
