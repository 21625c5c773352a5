#include "trafo/forest.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>

#include "trafo/errors.hpp"

namespace trafo {

TreeConfig forest_tree_defaults() {
  TreeConfig c;
  c.stop_on_alpha = false;
  return c;
}

std::size_t ForestConfig::effective_mtry(std::size_t n_predictors) const {
  const std::size_t k = mtry.value_or((n_predictors + 2) / 3);
  return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(n_predictors, 1));
}

std::size_t ForestConfig::subsample_size(std::size_t n) const {
  // Guard against 0.632 * 250 landing just below 158.
  return static_cast<std::size_t>(std::floor(subsample_fraction * static_cast<double>(n) + 1e-9));
}

void ForestConfig::validate() const {
  if (n_trees < 1) throw std::invalid_argument("n_trees must be >= 1");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0))
    throw std::invalid_argument("subsample_fraction must lie in (0, 1]");
  if (mtry && *mtry == 0) throw std::invalid_argument("mtry must be >= 1");
}

Rng derived_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t attempt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(attempt)};
  return Rng(seq);
}

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t stream) {
  auto rng = derived_rng(seed, stream, 0xb007);
  return rng();
}

Forest::Forest(Dataset data, ModelSpec spec, ForestConfig config, std::vector<Tree> trees,
               std::vector<std::vector<std::size_t>> subsamples)
    : data_(std::move(data)),
      spec_(std::move(spec)),
      config_(std::move(config)),
      trees_(std::move(trees)),
      subsamples_(std::move(subsamples)) {
  if (trees_.empty() || trees_.size() != subsamples_.size())
    throw std::invalid_argument("forest needs one subsample per tree");
  for (auto& s : subsamples_) std::sort(s.begin(), s.end());
}

bool Forest::in_bag(std::size_t tree, std::size_t row) const {
  const auto& s = subsamples_[tree];
  return std::binary_search(s.begin(), s.end(), row);
}

namespace {

struct GrownTree {
  std::optional<Tree> tree;
  std::vector<std::size_t> subsample;
};

GrownTree grow_one(const Dataset& data, const ModelSpec& spec, const ForestConfig& config,
                   const TreeConfig& tree_config, std::size_t t) {
  const std::size_t n = data.size();
  const std::size_t m = std::max<std::size_t>(config.subsample_size(n), 1);
  for (int attempt = 0;; ++attempt) {
    auto rng = derived_rng(config.seed, t, static_cast<std::uint64_t>(attempt));
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    if (m < n) {
      for (std::size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(rows[i], rows[pick(rng)]);
      }
      rows.resize(m);
      std::sort(rows.begin(), rows.end());
    }
    try {
      Tree tree = grow_tree(data, rows, spec, tree_config, rng, config.optimizer);
      return {std::move(tree), std::move(rows)};
    } catch (const Error& e) {
      if (attempt >= 1) throw Error("tree " + std::to_string(t) + " failed twice: " + e.what());
    }
  }
}

}  // namespace

Forest fit_forest(const Dataset& data, const ModelSpec& spec, const ForestConfig& config) {
  config.validate();
  TreeConfig tree_config = config.tree;
  tree_config.mtry = config.effective_mtry(data.n_predictors());
  if (config.kind == TreeKind::MSE) tree_config.split_mode = SplitMode::ExhaustiveMSE;
  tree_config.validate(spec.basis.dim());

  std::vector<GrownTree> grown(config.n_trees);
  std::vector<std::exception_ptr> errors(config.n_trees);
  auto work = [&](std::size_t t) {
    try {
      grown[t] = grow_one(data, spec, config, tree_config, t);
    } catch (...) {
      errors[t] = std::current_exception();
    }
  };
  const unsigned threads = std::max(1U, std::min<unsigned>(config.threads, static_cast<unsigned>(config.n_trees)));
  if (threads == 1) {
    for (std::size_t t = 0; t < config.n_trees; ++t) work(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < threads; ++k) {
      pool.emplace_back([&] {
        for (std::size_t t = next++; t < config.n_trees; t = next++) work(t);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<Tree> trees;
  std::vector<std::vector<std::size_t>> subsamples;
  trees.reserve(config.n_trees);
  for (auto& g : grown) {
    trees.push_back(std::move(*g.tree));
    subsamples.push_back(std::move(g.subsample));
  }
  ForestConfig stored = config;
  stored.tree = tree_config;
  return Forest(data, spec, stored, std::move(trees), std::move(subsamples));
}

std::vector<double> forest_weights(const Forest& forest, const Eigen::VectorXd& x, WeightMode mode,
                                   std::optional<std::size_t> row) {
  if (mode == WeightMode::OutOfBag && !row)
    throw std::invalid_argument("out-of-bag weights need the training row index");
  std::vector<double> w(forest.data().size(), 0.0);
  for (std::size_t t = 0; t < forest.trees().size(); ++t) {
    if (mode == WeightMode::OutOfBag && forest.in_bag(t, *row)) continue;
    const auto& tree = forest.trees()[t];
    for (auto i : tree.node(tree.leaf_for(x)).members) w[i] += 1.0;
  }
  return w;
}

TransformationModel predict_params(const Forest& forest, const Eigen::VectorXd& x, WeightMode mode,
                                   std::optional<std::size_t> row) {
  const auto w = forest_weights(forest, x, mode, row);
  if (std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0; }))
    throw UnpredictablePointError("all forest weights are zero for this point");

  // Averaged leaf parameters are increasing and make a good warm start.
  Eigen::VectorXd start = Eigen::VectorXd::Zero(forest.spec().basis.dim());
  int used = 0;
  for (std::size_t t = 0; t < forest.trees().size(); ++t) {
    if (mode == WeightMode::OutOfBag && forest.in_bag(t, *row)) continue;
    start += forest.trees()[t].model_at(x).theta();
    ++used;
  }
  start /= std::max(used, 1);
  return fit_mle(forest.spec(), forest.data().responses(), w, forest.config().optimizer, &start).model;
}

double forest_log_likelihood(const Forest& forest, const Dataset& data, WeightMode mode) {
  if (mode == WeightMode::OutOfBag && data.size() != forest.data().size())
    throw std::invalid_argument("out-of-bag evaluation needs the training rows");
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto model = predict_params(forest, data.row(i), mode,
                                      mode == WeightMode::OutOfBag ? std::optional<std::size_t>(i) : std::nullopt);
    total += log_likelihood(model, data.response(i));
  }
  return total;
}

}  // namespace trafo
