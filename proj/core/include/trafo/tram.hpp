#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trafo/basis.hpp"

namespace trafo {

enum class CensoringStatus { Exact, IntervalCensored, LeftCensored, RightCensored };

/// One observation of the target. For exact observations `low == high`.
/// Censored observations cover (low, high] with -inf/+inf for the open side.
/// Truncation restricts sampling to (trunc_low, trunc_high].
struct Response {
  static constexpr double kInf = std::numeric_limits<double>::infinity();

  CensoringStatus status = CensoringStatus::Exact;
  double low = 0.0;
  double high = 0.0;
  double trunc_low = -kInf;
  double trunc_high = kInf;

  static Response exact(double y);
  static Response interval(double low, double high);
  static Response left_censored(double high);
  static Response right_censored(double low);

  /// Copy of this response truncated to (lower, upper]; censoring bounds are
  /// clipped to that window.
  Response truncated(double lower, double upper) const;

  bool is_exact() const { return status == CensoringStatus::Exact; }
  bool is_truncated() const { return trunc_low > -kInf || trunc_high < kInf; }

  friend bool operator==(const Response&, const Response&) = default;
};

enum class Scale { Continuous, Ordinal, Categorical };

struct Column {
  std::string name;
  Scale scale = Scale::Continuous;
  /// Level labels for categorical columns; values are stored as level codes.
  std::vector<std::string> levels;

  friend bool operator==(const Column&, const Column&) = default;
};

/// Learning sample: responses plus an N x J predictor matrix. Categorical
/// predictors hold integer level codes 0..L-1.
class Dataset {
 public:
  Dataset(std::vector<Response> responses, Eigen::MatrixXd predictors,
          std::vector<Column> columns);

  /// Continuous columns named x1..xJ.
  static Dataset with_default_columns(std::vector<Response> responses,
                                      Eigen::MatrixXd predictors);

  std::size_t size() const { return responses_.size(); }
  std::size_t n_predictors() const { return columns_.size(); }
  const std::vector<Response>& responses() const { return responses_; }
  const Response& response(std::size_t i) const { return responses_[i]; }
  const Eigen::MatrixXd& predictors() const { return predictors_; }
  double x(std::size_t i, std::size_t j) const { return predictors_(i, j); }
  Eigen::VectorXd row(std::size_t i) const { return predictors_.row(i).transpose(); }
  const std::vector<Column>& columns() const { return columns_; }

  /// Same predictors with replaced responses.
  Dataset with_responses(std::vector<Response> responses) const;

 private:
  std::vector<Response> responses_;
  Eigen::MatrixXd predictors_;
  std::vector<Column> columns_;
};

/// Prob(Y <= y) = F_Z(a(y)^T theta). Outside the support h is continued
/// linearly with the boundary slope, which keeps it strictly increasing.
class TransformationModel {
 public:
  TransformationModel(BernsteinBasis basis, BaseDistribution dist, Eigen::VectorXd theta);

  const BernsteinBasis& basis() const { return basis_; }
  BaseDistribution dist() const { return dist_; }
  const Eigen::VectorXd& theta() const { return theta_; }

  double transform(double y) const;
  double transform_deriv(double y) const;
  double cdf(double y) const;
  double log_density(double y) const;
  /// Inverse cdf by bisection, clamped to the support endpoints.
  double quantile(double p) const;

  friend bool operator==(const TransformationModel&, const TransformationModel&) = default;

 private:
  BernsteinBasis basis_;
  BaseDistribution dist_;
  Eigen::VectorXd theta_;
};

/// Basis and derivative at y, with the linear continuation outside the
/// support. Infinite y yields a zero derivative and a basis vector the caller
/// must not use.
void basis_with_extrapolation(const BernsteinBasis& basis, double y,
                              Eigen::Ref<Eigen::VectorXd> a, Eigen::Ref<Eigen::VectorXd> ad);

/// Log-likelihood contribution; throws DegenerateLikelihoodError when the
/// observation has zero probability under the model.
double log_likelihood(const TransformationModel& model, const Response& resp);

/// Gradient of log_likelihood with respect to theta.
Eigen::VectorXd score(const TransformationModel& model, const Response& resp);

/// Per-observation score matrix (n x P) for a subset of responses.
Eigen::MatrixXd score_matrix(const TransformationModel& model, std::span<const Response> resp,
                             std::span<const std::size_t> rows);

/// Support [min - 5% range, max + 5% range] over the finite response
/// endpoints (truncation bounds excluded).
SupportInterval default_support(std::span<const Response> responses);

/// The transformation family a fit lives in.
struct ModelSpec {
  BernsteinBasis basis;
  BaseDistribution dist = BaseDistribution::StandardNormal;
};

struct OptimizerOptions {
  double gap_tol = 1e-8;
  double rel_tol = 1e-8;
  double grad_tol = 1e-6;
  int max_iter = 500;
};

struct FitResult {
  TransformationModel model;
  double log_likelihood;  // weighted
  int iterations;
};

/// Weighted maximum likelihood under strict monotonicity of theta. Observations
/// with zero weight are ignored. Throws RankDeficiencyError if fewer than P
/// distinct observations carry positive weight, ConvergenceError if the
/// iteration limit is hit.
FitResult fit_mle(const ModelSpec& spec, std::span<const Response> responses,
                  std::span<const double> weights, const OptimizerOptions& options = {},
                  const Eigen::VectorXd* start = nullptr);

/// Weighted log-likelihood sum; -inf if any positively weighted term is.
double weighted_log_likelihood(const TransformationModel& model,
                               std::span<const Response> responses,
                               std::span<const double> weights);

/// The feasible starting point used by fit_mle: equally spaced between the
/// 10% and 90% quantiles of F_Z.
Eigen::VectorXd initial_theta(const ModelSpec& spec);

}  // namespace trafo
