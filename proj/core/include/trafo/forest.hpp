#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "trafo/tree.hpp"

namespace trafo {

enum class TreeKind { Transformation, MSE };
enum class WeightMode { InBag, OutOfBag };

/// Tree settings used inside forests: no alpha stopping.
TreeConfig forest_tree_defaults();

struct ForestConfig {
  std::size_t n_trees = 100;
  /// Fraction of rows drawn without replacement per tree.
  double subsample_fraction = 0.632;
  std::optional<std::size_t> mtry;  // default ceil(J / 3)
  TreeConfig tree = forest_tree_defaults();
  TreeKind kind = TreeKind::Transformation;
  std::uint64_t seed = 42;
  /// Worker threads for growing trees; results do not depend on it.
  unsigned threads = 1;
  OptimizerOptions optimizer;

  std::size_t effective_mtry(std::size_t n_predictors) const;
  std::size_t subsample_size(std::size_t n) const;
  void validate() const;
};

/// Rng for stream `stream` derived from a master seed, independent of the
/// order in which streams are consumed.
Rng derived_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t attempt = 0);
std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t stream);

class Forest {
 public:
  Forest(Dataset data, ModelSpec spec, ForestConfig config, std::vector<Tree> trees,
         std::vector<std::vector<std::size_t>> subsamples);

  const Dataset& data() const { return data_; }
  const ModelSpec& spec() const { return spec_; }
  const ForestConfig& config() const { return config_; }
  const std::vector<Tree>& trees() const { return trees_; }
  /// Sorted row indices each tree was grown on.
  const std::vector<std::vector<std::size_t>>& subsamples() const { return subsamples_; }
  bool in_bag(std::size_t tree, std::size_t row) const;

 private:
  Dataset data_;
  ModelSpec spec_;
  ForestConfig config_;
  std::vector<Tree> trees_;
  std::vector<std::vector<std::size_t>> subsamples_;
};

Forest fit_forest(const Dataset& data, const ModelSpec& spec, const ForestConfig& config);

/// Nearest-neighbour weights over the training rows. OutOfBag mode needs the
/// training row index of x and skips trees whose subsample contains it.
std::vector<double> forest_weights(const Forest& forest, const Eigen::VectorXd& x, WeightMode mode,
                                   std::optional<std::size_t> row = std::nullopt);

/// Local maximum likelihood with forest weights. Throws UnpredictablePointError
/// when all weights vanish.
TransformationModel predict_params(const Forest& forest, const Eigen::VectorXd& x, WeightMode mode,
                                   std::optional<std::size_t> row = std::nullopt);

/// Sum of log-likelihood contributions of `data` under the forest's
/// conditional models. OutOfBag mode treats data row i as training row i.
double forest_log_likelihood(const Forest& forest, const Dataset& data, WeightMode mode);

}  // namespace trafo
