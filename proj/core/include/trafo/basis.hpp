#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace trafo {

/// Closed interval [lower, upper] on which the Bernstein basis is defined.
class SupportInterval {
 public:
  SupportInterval(double lower, double upper);

  double lower() const { return lower_; }
  double upper() const { return upper_; }
  double width() const { return upper_ - lower_; }
  bool contains(double y) const { return y >= lower_ && y <= upper_; }

  /// Maps y to [0, 1]; no range check.
  double rescale(double y) const { return (y - lower_) / (upper_ - lower_); }

  friend bool operator==(const SupportInterval&, const SupportInterval&) = default;

 private:
  double lower_;
  double upper_;
};

/// Bernstein polynomial basis of order M (dimension P = M + 1) on a support
/// interval. Entry m of the basis at y is C(M, m) t^m (1 - t)^(M - m) with
/// t = (y - lower) / (upper - lower), i.e. the Beta(m + 1, M - m + 1) density
/// at t divided by M + 1.
class BernsteinBasis {
 public:
  BernsteinBasis(int order, SupportInterval support);

  int order() const { return order_; }
  int dim() const { return order_ + 1; }
  const SupportInterval& support() const { return support_; }

  /// Basis vector a(y). Throws OutOfSupportError if y is outside the support.
  Eigen::VectorXd eval(double y) const;

  /// Derivative a'(y) with respect to y, so that a'(y)^T theta = h'(y).
  Eigen::VectorXd deriv(double y) const;

  /// Allocation-free variants; `out` must have size dim().
  void eval_into(double y, Eigen::Ref<Eigen::VectorXd> out) const;
  void deriv_into(double y, Eigen::Ref<Eigen::VectorXd> out) const;

  friend bool operator==(const BernsteinBasis& a, const BernsteinBasis& b) {
    return a.order_ == b.order_ && a.support_ == b.support_;
  }

 private:
  double checked_unit(double y) const;
  static void fill(int degree, double t, const std::vector<double>& binom,
                   double* out);

  int order_;
  SupportInterval support_;
  std::vector<double> binom_;        // C(M, m), m = 0..M
  std::vector<double> binom_lower_;  // C(M - 1, m), m = 0..M-1
};

enum class BaseDistribution { StandardNormal, StandardLogistic, StandardMinExtremeValue };

std::string_view to_string(BaseDistribution dist);
std::optional<BaseDistribution> parse_distribution(std::string_view name);

struct BaseDensity {
  double cdf;
  double pdf;
  double dlogpdf;  // f'(z) / f(z)
};

BaseDensity base_dist_eval(BaseDistribution dist, double z);

/// Inverse of F_Z. Throws std::domain_error unless 0 < p < 1.
double base_dist_quantile(BaseDistribution dist, double p);

// Log-space evaluations. All accept z = +-inf where meaningful.
double base_log_cdf(BaseDistribution dist, double z);
double base_log_survival(BaseDistribution dist, double z);
double base_log_pdf(BaseDistribution dist, double z);
double base_dlogpdf(BaseDistribution dist, double z);
/// Second derivative of log f_Z.
double base_d2logpdf(BaseDistribution dist, double z);

/// log(F(zb) - F(za)) for za <= zb, computed on whichever tail keeps
/// precision. Returns -inf when za == zb.
double base_log_interval_mass(BaseDistribution dist, double za, double zb);

}  // namespace trafo
