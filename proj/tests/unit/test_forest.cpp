#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "trafo/errors.hpp"
#include "trafo/forest.hpp"
#include "trafo/simbench.hpp"

using namespace trafo;

namespace {

Simulated simulate(Effect effect, std::uint64_t seed, std::size_t n = 250) {
  DgpSpec spec;
  spec.effect = effect;
  Rng rng(seed);
  return generate(spec, n, rng);
}

ModelSpec spec_for(const Dataset& data, int order = 1) {
  return {BernsteinBasis(order, default_support(data.responses())), BaseDistribution::StandardNormal};
}

// Standard deviation implied by an M = 1 normal model.
double affine_sd(const TransformationModel& m) {
  const auto& s = m.basis().support();
  return (s.upper() - s.lower()) / (m.theta()[1] - m.theta()[0]);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST(ForestConfig, Defaults) {
  const ForestConfig config;
  EXPECT_EQ(config.n_trees, 100u);
  EXPECT_EQ(config.subsample_size(250), 158u);
  EXPECT_EQ(config.subsample_size(1000), 632u);
  EXPECT_EQ(config.effective_mtry(7), 3u);
  EXPECT_EQ(config.effective_mtry(6), 2u);
  EXPECT_EQ(config.effective_mtry(1), 1u);
  EXPECT_FALSE(config.tree.stop_on_alpha);
  ForestConfig bad;
  bad.subsample_fraction = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = ForestConfig{};
  bad.n_trees = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(DerivedRng, StreamsAreIndependentOfOrder) {
  auto a = derived_rng(42, 3);
  auto b = derived_rng(42, 3);
  auto c = derived_rng(42, 4);
  auto d = derived_rng(42, 3, 1);
  const auto va = a();
  EXPECT_EQ(va, b());
  EXPECT_NE(va, c());
  EXPECT_NE(va, d());
  EXPECT_NE(derived_seed(1, 0), derived_seed(2, 0));
}

TEST(FitForest, SubsampleSizes) {
  const auto sim = simulate(Effect::MeanOnly, 1);
  ForestConfig config;
  config.n_trees = 10;
  const auto forest = fit_forest(sim.data, spec_for(sim.data), config);
  ASSERT_EQ(forest.trees().size(), 10u);
  for (std::size_t t = 0; t < 10; ++t) {
    const auto& sub = forest.subsamples()[t];
    EXPECT_EQ(sub.size(), 158u);
    EXPECT_TRUE(std::is_sorted(sub.begin(), sub.end()));
    EXPECT_EQ(std::adjacent_find(sub.begin(), sub.end()), sub.end());
    EXPECT_EQ(forest.trees()[t].subsample(), sub);
  }
}

TEST(FitForest, SingleFullTreeEqualsTree) {
  const auto sim = simulate(Effect::MeanAndVariance, 2);
  const auto spec = spec_for(sim.data);
  ForestConfig config;
  config.n_trees = 1;
  config.subsample_fraction = 1.0;
  config.tree.stop_on_alpha = true;
  config.mtry = sim.data.n_predictors();
  const auto forest = fit_forest(sim.data, spec, config);

  std::vector<std::size_t> rows(sim.data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  TreeConfig tc = config.tree;
  tc.mtry = sim.data.n_predictors();
  auto rng = derived_rng(config.seed, 0);
  const auto tree = grow_tree(sim.data, rows, spec, tc, rng);
  const auto& ft = forest.trees().front();
  ASSERT_EQ(ft.nodes().size(), tree.nodes().size());
  for (std::size_t k = 0; k < tree.nodes().size(); ++k) {
    EXPECT_EQ(ft.nodes()[k].split, tree.nodes()[k].split);
    EXPECT_EQ(ft.nodes()[k].members, tree.nodes()[k].members);
  }
  EXPECT_GT(tree.n_leaves(), 1u);
}

TEST(FitForest, DeterministicAcrossThreadCounts) {
  const auto sim = simulate(Effect::VarianceOnly, 3);
  const auto spec = spec_for(sim.data);
  ForestConfig config;
  config.n_trees = 12;
  config.seed = 99;
  const auto a = fit_forest(sim.data, spec, config);
  config.threads = 3;
  const auto b = fit_forest(sim.data, spec, config);
  ASSERT_EQ(a.trees().size(), b.trees().size());
  for (std::size_t t = 0; t < a.trees().size(); ++t) {
    EXPECT_EQ(a.subsamples()[t], b.subsamples()[t]);
    const auto& na = a.trees()[t].nodes();
    const auto& nb = b.trees()[t].nodes();
    ASSERT_EQ(na.size(), nb.size());
    for (std::size_t k = 0; k < na.size(); ++k) {
      EXPECT_EQ(na[k].split, nb[k].split);
      EXPECT_EQ(na[k].theta, nb[k].theta);
    }
  }
  config.seed = 100;
  const auto c = fit_forest(sim.data, spec, config);
  EXPECT_NE(a.subsamples()[0], c.subsamples()[0]);
}

TEST(ForestWeights, MatchesPerTreeLeafMembership) {
  const auto sim = simulate(Effect::MeanAndVariance, 4);
  ForestConfig config;
  config.n_trees = 15;
  const auto forest = fit_forest(sim.data, spec_for(sim.data), config);
  const auto n = sim.data.size();
  for (std::size_t q : {0u, 17u, 120u}) {
    const Eigen::VectorXd x = sim.data.row(q);
    // Oracle: count co-membership by scanning every tree's leaves directly.
    std::vector<double> in_bag(n, 0.0), oob(n, 0.0);
    for (std::size_t t = 0; t < forest.trees().size(); ++t) {
      const auto& tree = forest.trees()[t];
      const auto& leaf = tree.node(tree.leaf_for(x));
      const auto& sub = forest.subsamples()[t];
      const bool q_in = std::binary_search(sub.begin(), sub.end(), q);
      for (auto i : leaf.members) {
        in_bag[i] += 1.0;
        if (!q_in) oob[i] += 1.0;
      }
    }
    EXPECT_EQ(forest_weights(forest, x, WeightMode::InBag), in_bag);
    EXPECT_EQ(forest_weights(forest, x, WeightMode::OutOfBag, q), oob);
    for (double w : in_bag) {
      EXPECT_GE(w, 0.0);
      EXPECT_LE(w, 15.0);
      EXPECT_EQ(w, std::floor(w));
    }
  }
  EXPECT_THROW(forest_weights(forest, sim.data.row(0), WeightMode::OutOfBag), std::invalid_argument);
}

TEST(ForestWeights, RootOnlyTreesCountSubsampleMembership) {
  const auto sim = simulate(Effect::None, 5, 100);
  ForestConfig config;
  config.n_trees = 7;
  config.tree.max_depth = 0;
  const auto forest = fit_forest(sim.data, spec_for(sim.data), config);
  const auto w = forest_weights(forest, sim.data.row(3), WeightMode::InBag);
  for (std::size_t i = 0; i < sim.data.size(); ++i) {
    double count = 0.0;
    for (std::size_t t = 0; t < 7; ++t) count += forest.in_bag(t, i) ? 1.0 : 0.0;
    EXPECT_EQ(w[i], count);
  }
}

TEST(PredictParams, RootOnlyFullForestIsUnconditional) {
  const auto sim = simulate(Effect::MeanOnly, 6, 120);
  const auto spec = spec_for(sim.data, 3);
  ForestConfig config;
  config.n_trees = 3;
  config.subsample_fraction = 1.0;
  config.tree.max_depth = 0;
  const auto forest = fit_forest(sim.data, spec, config);
  const auto fit = fit_mle(spec, sim.data.responses(), test_util::ones(sim.data.size()));
  for (std::size_t q : {0u, 50u}) {
    const auto model = predict_params(forest, sim.data.row(q), WeightMode::InBag);
    EXPECT_LE((model.theta() - fit.model.theta()).cwiseAbs().maxCoeff(), 1e-5);
    for (Eigen::Index m = 1; m < model.theta().size(); ++m)
      EXPECT_GT(model.theta()[m], model.theta()[m - 1]);
  }
  EXPECT_NEAR(forest_log_likelihood(forest, sim.data, WeightMode::InBag), fit.log_likelihood, 1e-6);
}

TEST(PredictParams, UnpredictablePoint) {
  const auto sim = simulate(Effect::None, 7, 60);
  ForestConfig config;
  config.n_trees = 1;
  config.subsample_fraction = 1.0;
  config.tree.max_depth = 0;
  const auto forest = fit_forest(sim.data, spec_for(sim.data), config);
  // Every row is in the single tree's subsample, so no out-of-bag weight exists.
  EXPECT_THROW(predict_params(forest, sim.data.row(0), WeightMode::OutOfBag, 0), UnpredictablePointError);
}

TEST(PredictParams, RecoversConditionalVariance) {
  std::vector<double> high, low;
  for (int rep = 0; rep < 20; ++rep) {
    const auto sim = simulate(Effect::VarianceOnly, 100 + rep);
    ForestConfig config;
    config.seed = rep;
    const auto forest = fit_forest(sim.data, spec_for(sim.data), config);
    Eigen::VectorXd x = Eigen::VectorXd::Constant(sim.data.n_predictors(), 0.5);
    x[0] = 0.3;
    x[1] = 0.75;
    high.push_back(affine_sd(predict_params(forest, x, WeightMode::InBag)));
    x[1] = 0.25;
    low.push_back(affine_sd(predict_params(forest, x, WeightMode::InBag)));
  }
  const double mh = median(high), ml = median(low);
  EXPECT_GE(mh, 1.5);
  EXPECT_LE(mh, 2.5);
  EXPECT_GE(ml, 0.75);
  EXPECT_LE(ml, 1.25);
}

TEST(ForestLogLikelihood, InBagExceedsOutOfBag) {
  std::vector<double> diff;
  for (int rep = 0; rep < 20; ++rep) {
    const auto sim = simulate(Effect::MeanAndVariance, 300 + rep, 150);
    ForestConfig config;
    config.n_trees = 30;
    config.seed = rep;
    const auto forest = fit_forest(sim.data, spec_for(sim.data), config);
    diff.push_back(forest_log_likelihood(forest, sim.data, WeightMode::InBag) -
                   forest_log_likelihood(forest, sim.data, WeightMode::OutOfBag));
  }
  EXPECT_GT(median(diff), 0.0);
}

TEST(ForestLogLikelihood, NoisePredictorsStayFinite) {
  DgpSpec spec;
  spec.effect = Effect::MeanOnly;
  spec.dim = Dim::High;
  Rng rng(8);
  const auto sim = generate(spec, 120, rng);
  EXPECT_EQ(sim.data.n_predictors(), 52u);
  ForestConfig config;
  config.n_trees = 10;
  const auto forest = fit_forest(sim.data, spec_for(sim.data), config);
  EXPECT_TRUE(std::isfinite(forest_log_likelihood(forest, sim.data, WeightMode::InBag)));
}

TEST(FitForest, MseForestSplitsOnMean) {
  const auto sim = simulate(Effect::MeanOnly, 9);
  ForestConfig config;
  config.n_trees = 10;
  config.kind = TreeKind::MSE;
  config.mtry = sim.data.n_predictors();
  const auto forest = fit_forest(sim.data, spec_for(sim.data), config);
  int on_x1 = 0;
  for (const auto& tree : forest.trees())
    if (tree.first_split() && tree.first_split()->variable == 0) ++on_x1;
  EXPECT_GE(on_x1, 9);
}
