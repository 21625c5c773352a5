#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "trafo/forest.hpp"

namespace trafo {

struct PredictionInterval {
  double lower = 0.0;
  double upper = 0.0;
  double alpha = 0.0;
  /// A bound sits on the support endpoint because the requested tail
  /// probability lies beyond it.
  bool lower_clamped = false;
  bool upper_clamped = false;
};

PredictionInterval prediction_interval(const TransformationModel& model, double alpha);

struct ImportanceOptions {
  /// Evaluate each tree on its out-of-bag rows only (otherwise all rows).
  bool out_of_bag = true;
  /// Test hook: use the identity instead of a random permutation.
  bool identity_permutation = false;
};

/// Mean increase of the negative log-likelihood when column j is permuted,
/// per tree and averaged over trees. Larger means more important.
struct ImportanceReport {
  std::vector<double> importance;
  std::uint64_t seed = 0;
};

ImportanceReport variable_importance(const Forest& forest, std::uint64_t seed,
                                     const ImportanceOptions& options = {});

/// Draws one response per training row from the forest's in-bag conditional
/// models, by inversion of U(0,1) draws.
std::vector<double> sample_conditional(const Forest& forest, Rng& rng);

/// Refits K forests on responses drawn from the fitted conditional models.
std::vector<Forest> model_based_bootstrap(const Forest& forest, std::size_t K, std::uint64_t seed);

struct LrTestResult {
  double log_lr = 0.0;
  double p_value = 1.0;
  std::vector<double> null_log_lr;
};

/// Bootstrap p-value as the fraction of null statistics strictly above the
/// observed one.
double bootstrap_p_value(double observed, const std::vector<double>& null_stats);

/// Likelihood-ratio test of independence between response and predictors:
/// in-bag forest log-likelihood against the unconditional fit, calibrated by
/// K parametric bootstrap refits under the unconditional model.
LrTestResult independence_lr_test(const Dataset& data, const ModelSpec& spec,
                                  const ForestConfig& config, std::size_t K, std::uint64_t seed);

}  // namespace trafo
