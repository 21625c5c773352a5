#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace trafo {

/// Base class of all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A response value lies outside the Bernstein support interval.
class OutOfSupportError : public Error {
 public:
  using Error::Error;
};

/// A likelihood contribution is zero (log-likelihood -inf).
class DegenerateLikelihoodError : public Error {
 public:
  using Error::Error;
};

/// Too few informative observations to identify all P parameters.
class RankDeficiencyError : public Error {
 public:
  using Error::Error;
};

/// The optimizer hit its iteration limit; carries the best iterate found.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, Eigen::VectorXd best_theta)
      : Error(what), best_theta_(std::move(best_theta)) {}
  const Eigen::VectorXd& best_theta() const { return best_theta_; }

 private:
  Eigen::VectorXd best_theta_;
};

/// Response type not supported by the requested procedure (e.g. censored data
/// in the MSE baseline).
class UnsupportedResponseError : public Error {
 public:
  using Error::Error;
};

/// All forest weights are zero for a query point.
class UnpredictablePointError : public Error {
 public:
  using Error::Error;
};

/// Malformed tabular input or model document.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0) : Error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Model and data disagree on the column layout.
class SchemaError : public Error {
 public:
  using Error::Error;
};

}  // namespace trafo
