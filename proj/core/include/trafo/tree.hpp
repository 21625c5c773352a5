#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "trafo/tram.hpp"

namespace trafo {

using Rng = std::mt19937_64;

enum class SplitMode { ScoreMaxStat, ExhaustiveLikelihood, ExhaustiveMSE };
enum class TestStatistic { Quadratic, MaxAbs };
/// Transformation g(x) used for the variable-selection linear statistic.
enum class SelectionStatistic { Linear, MaxSelected };

struct TreeConfig {
  double alpha = 0.05;
  bool bonferroni = true;
  /// Stop when no Bonferroni-adjusted p-value is <= alpha. Forests disable it.
  bool stop_on_alpha = true;
  std::size_t minsplit = 25;
  std::optional<std::size_t> minbucket;  // default ceil(minsplit / 3)
  std::optional<std::size_t> mtry;       // default: all predictors
  std::optional<int> max_depth;
  SplitMode split_mode = SplitMode::ScoreMaxStat;
  TestStatistic test_stat = TestStatistic::Quadratic;
  SelectionStatistic g_mode = SelectionStatistic::Linear;
  /// Monte-Carlo resamples for the MaxSelected selection p-value.
  int maxselected_resamples = 999;

  std::size_t effective_minbucket() const;
  /// Throws std::invalid_argument for inconsistent settings given P.
  void validate(int n_params) const;
};

/// Linear statistic T = sum_i g_i s_i^T with its conditional expectation and
/// covariance over all permutations of the rows of s.
struct LinearStatistic {
  Eigen::MatrixXd statistic;    // Q x P
  Eigen::MatrixXd expectation;  // Q x P
  Eigen::MatrixXd covariance;   // QP x QP, ordered like vec(T) (column-major)
  bool zero_variance = false;
};

LinearStatistic linear_statistic_moments(const Eigen::MatrixXd& g, const Eigen::MatrixXd& s);

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  int df = 0;
  bool zero_variance = true;
};

/// Standardises a linear statistic. Quadratic: Moore-Penrose quadratic form
/// against chi^2(rank). MaxAbs: largest standardised |T - E| with a Bonferroni
/// normal bound over components.
TestResult test_linear_statistic(const LinearStatistic& stat, TestStatistic kind);

struct SelectionResult {
  std::vector<std::size_t> candidates;
  std::vector<double> statistic;
  std::vector<double> p_value;
  std::vector<double> adjusted_p;
  /// Column index of the selected variable; empty means "stop".
  std::optional<std::size_t> best;

  /// Candidates ordered by adjusted p-value (ties: smaller column first).
  std::vector<std::size_t> ranked() const;
};

/// Permutation-test variable selection on a node. `scores` row r belongs to
/// observation rows[r].
SelectionResult variable_selection(const Dataset& data, std::span<const std::size_t> rows,
                                   const Eigen::MatrixXd& scores,
                                   std::span<const std::size_t> candidates,
                                   const TreeConfig& config, Rng& rng);

struct SplitRecord {
  std::size_t variable = 0;
  bool categorical = false;
  /// Left iff x <= cutpoint (continuous / ordinal).
  double cutpoint = 0.0;
  /// Left iff level in left_levels (categorical). Both sets sorted.
  std::vector<int> left_levels;
  std::vector<int> right_levels;
  /// Criterion value of the chosen split (standardised statistic, summed
  /// log-likelihood or variance reduction depending on the search).
  double criterion = 0.0;

  friend bool operator==(const SplitRecord&, const SplitRecord&) = default;
};

/// Maximally selected score statistic over all admissible binary splits of
/// one variable. Sorted prefix sums keep this O(P n log n).
std::optional<SplitRecord> split_maxstat(const Dataset& data, std::span<const std::size_t> rows,
                                         const Eigen::MatrixXd& scores, std::size_t variable,
                                         const TreeConfig& config);

/// Exhaustive search maximising the sum of refitted child log-likelihoods.
/// `evaluated` receives the number of candidate splits that were fitted.
std::optional<SplitRecord> split_exhaustive_loglik(const Dataset& data,
                                                   std::span<const std::size_t> rows,
                                                   std::size_t variable, const ModelSpec& spec,
                                                   const TreeConfig& config,
                                                   const OptimizerOptions& options = {},
                                                   const Eigen::VectorXd* start = nullptr,
                                                   std::size_t* evaluated = nullptr);

/// CART variance-reduction split over the candidate variables (exact
/// responses only).
std::optional<SplitRecord> split_mse(const Dataset& data, std::span<const std::size_t> rows,
                                     std::span<const std::size_t> candidates,
                                     const TreeConfig& config);

struct TreeNode {
  int id = 0;
  int depth = 0;
  std::optional<SplitRecord> split;
  int left = -1;
  int right = -1;
  Eigen::VectorXd theta;
  std::size_t n = 0;
  /// Learning-sample indices of the observations in this leaf (leaves only).
  std::vector<std::size_t> members;

  bool is_leaf() const { return !split.has_value(); }
};

class Tree {
 public:
  Tree(ModelSpec spec, std::vector<TreeNode> nodes);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const TreeNode& root() const { return nodes_.front(); }
  const TreeNode& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  /// Index of the leaf that x falls into.
  int leaf_for(std::span<const double> x) const;
  int leaf_for(const Eigen::VectorXd& x) const;
  /// Leaf parameter lookup, no refit.
  TransformationModel model_at(const Eigen::VectorXd& x) const;

  std::size_t n_leaves() const;
  /// All learning-sample indices the tree was grown on (sorted).
  std::vector<std::size_t> subsample() const;
  /// First split, if any.
  const std::optional<SplitRecord>& first_split() const { return root().split; }

 private:
  int child_for(const TreeNode& node, double value) const;

  ModelSpec spec_;
  std::vector<TreeNode> nodes_;
};

/// Transformation tree on the given subsample: node MLE, score-based variable
/// selection, split search per config.split_mode, recursion.
Tree grow_tree(const Dataset& data, std::span<const std::size_t> subsample, const ModelSpec& spec,
               const TreeConfig& config, Rng& rng, const OptimizerOptions& options = {});

/// CART-style baseline tree (exhaustive variance reduction, no significance
/// stopping); nodes are afterwards fitted with the transformation model.
Tree grow_tree_mse(const Dataset& data, std::span<const std::size_t> subsample,
                   const ModelSpec& spec, const TreeConfig& config, Rng& rng,
                   const OptimizerOptions& options = {});

/// w_i(x) = 1 when x and observation i share a leaf, else 0.
std::vector<double> tree_weights(const Tree& tree, const Eigen::VectorXd& x, std::size_t n_obs);

/// Draws min(k, candidates) distinct predictor indices, returned sorted.
std::vector<std::size_t> draw_candidates(std::size_t n_predictors, std::optional<std::size_t> k,
                                         Rng& rng);

}  // namespace trafo
