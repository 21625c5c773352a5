#include "trafo/basis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <boost/math/special_functions/erf.hpp>

#include "trafo/errors.hpp"

namespace trafo {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
const double kLogSqrt2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

// Beyond this |z| the normal tails switch to the asymptotic expansion.
constexpr double kNormalTail = 30.0;

std::vector<double> binomial_row(int n) {
  std::vector<double> row(static_cast<std::size_t>(std::max(n, 0)) + 1);
  for (int k = 0; k <= n; ++k) {
    row[k] = std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0));
    // exact integers below 2^53
    if (n <= 50) row[k] = std::round(row[k]);
  }
  return row;
}

// log(1 - exp(x)) for x <= 0.
double log1mexp(double x) {
  if (x > -std::numbers::ln2) return std::log(-std::expm1(x));
  return std::log1p(-std::exp(x));
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double normal_log_cdf(double z) {
  if (z == kInf) return 0.0;
  if (z == -kInf) return -kInf;
  if (z > -kNormalTail) return std::log(0.5 * std::erfc(-z / std::numbers::sqrt2));
  // Mills-ratio expansion: Phi(z) ~ phi(z)/|z| (1 - 1/z^2 + 3/z^4 - 15/z^6 + 105/z^8)
  const double z2 = z * z;
  const double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2) +
                        105.0 / (z2 * z2 * z2 * z2);
  return -0.5 * z2 - kLogSqrt2Pi - std::log(-z) + std::log(series);
}

}  // namespace

SupportInterval::SupportInterval(double lower, double upper) : lower_(lower), upper_(upper) {
  if (!std::isfinite(lower) || !std::isfinite(upper) || !(lower < upper)) {
    std::ostringstream msg;
    msg << "invalid support interval [" << lower << ", " << upper << "]";
    throw std::invalid_argument(msg.str());
  }
}

BernsteinBasis::BernsteinBasis(int order, SupportInterval support)
    : order_(order), support_(support) {
  if (order < 1) throw std::invalid_argument("Bernstein order must be >= 1");
  binom_ = binomial_row(order);
  binom_lower_ = binomial_row(order - 1);
}

double BernsteinBasis::checked_unit(double y) const {
  if (!support_.contains(y)) {
    std::ostringstream msg;
    msg << "value " << y << " outside support [" << support_.lower() << ", " << support_.upper()
        << "]";
    throw OutOfSupportError(msg.str());
  }
  return std::clamp(support_.rescale(y), 0.0, 1.0);
}

void BernsteinBasis::fill(int degree, double t, const std::vector<double>& binom, double* out) {
  // out[m] = C(degree, m) t^m (1 - t)^(degree - m); powers built iteratively.
  const double s = 1.0 - t;
  double tp = 1.0;
  for (int m = 0; m <= degree; ++m) {
    out[m] = binom[m] * tp;
    tp *= t;
  }
  double sp = 1.0;
  for (int m = degree; m >= 0; --m) {
    out[m] *= sp;
    sp *= s;
  }
}

void BernsteinBasis::eval_into(double y, Eigen::Ref<Eigen::VectorXd> out) const {
  fill(order_, checked_unit(y), binom_, out.data());
}

void BernsteinBasis::deriv_into(double y, Eigen::Ref<Eigen::VectorXd> out) const {
  const double t = checked_unit(y);
  // d/dy b_{m,M} = M (b_{m-1,M-1} - b_{m,M-1}) / width
  double lower[64];
  std::vector<double> heap;
  double* low = lower;
  if (order_ > 64) {
    heap.resize(order_);
    low = heap.data();
  }
  fill(order_ - 1, t, binom_lower_, low);
  const double scale = order_ / support_.width();
  for (int m = 0; m <= order_; ++m) {
    const double left = m > 0 ? low[m - 1] : 0.0;
    const double right = m < order_ ? low[m] : 0.0;
    out[m] = scale * (left - right);
  }
}

Eigen::VectorXd BernsteinBasis::eval(double y) const {
  Eigen::VectorXd out(dim());
  eval_into(y, out);
  return out;
}

Eigen::VectorXd BernsteinBasis::deriv(double y) const {
  Eigen::VectorXd out(dim());
  deriv_into(y, out);
  return out;
}

std::string_view to_string(BaseDistribution dist) {
  switch (dist) {
    case BaseDistribution::StandardNormal: return "normal";
    case BaseDistribution::StandardLogistic: return "logistic";
    case BaseDistribution::StandardMinExtremeValue: return "minextreme";
  }
  return "unknown";
}

std::optional<BaseDistribution> parse_distribution(std::string_view name) {
  if (name == "normal") return BaseDistribution::StandardNormal;
  if (name == "logistic") return BaseDistribution::StandardLogistic;
  if (name == "minextreme") return BaseDistribution::StandardMinExtremeValue;
  return std::nullopt;
}

double base_log_cdf(BaseDistribution dist, double z) {
  switch (dist) {
    case BaseDistribution::StandardNormal: return normal_log_cdf(z);
    case BaseDistribution::StandardLogistic:
      if (z == kInf) return 0.0;
      if (z == -kInf) return -kInf;
      return -softplus(-z);
    case BaseDistribution::StandardMinExtremeValue: {
      if (z == kInf) return 0.0;
      if (z == -kInf) return -kInf;
      if (z < -30.0) return z - 0.5 * std::exp(z);
      return std::log(-std::expm1(-std::exp(z)));
    }
  }
  return std::numeric_limits<double>::quiet_NaN();
}

double base_log_survival(BaseDistribution dist, double z) {
  switch (dist) {
    case BaseDistribution::StandardNormal: return normal_log_cdf(-z);
    case BaseDistribution::StandardLogistic:
      if (z == kInf) return -kInf;
      if (z == -kInf) return 0.0;
      return -softplus(z);
    case BaseDistribution::StandardMinExtremeValue:
      if (z == -kInf) return 0.0;
      return -std::exp(z);
  }
  return std::numeric_limits<double>::quiet_NaN();
}

double base_log_pdf(BaseDistribution dist, double z) {
  if (std::isinf(z)) return -kInf;
  switch (dist) {
    case BaseDistribution::StandardNormal: return -0.5 * z * z - kLogSqrt2Pi;
    case BaseDistribution::StandardLogistic: return -softplus(z) - softplus(-z);
    case BaseDistribution::StandardMinExtremeValue: return z - std::exp(z);
  }
  return std::numeric_limits<double>::quiet_NaN();
}

double base_dlogpdf(BaseDistribution dist, double z) {
  switch (dist) {
    case BaseDistribution::StandardNormal: return -z;
    case BaseDistribution::StandardLogistic: return -std::tanh(0.5 * z);
    case BaseDistribution::StandardMinExtremeValue: return 1.0 - std::exp(z);
  }
  return std::numeric_limits<double>::quiet_NaN();
}

double base_d2logpdf(BaseDistribution dist, double z) {
  switch (dist) {
    case BaseDistribution::StandardNormal: return -1.0;
    case BaseDistribution::StandardLogistic: return -2.0 * std::exp(base_log_pdf(dist, z));
    case BaseDistribution::StandardMinExtremeValue: return -std::exp(z);
  }
  return std::numeric_limits<double>::quiet_NaN();
}

BaseDensity base_dist_eval(BaseDistribution dist, double z) {
  return {std::exp(base_log_cdf(dist, z)), std::exp(base_log_pdf(dist, z)), base_dlogpdf(dist, z)};
}

double base_log_interval_mass(BaseDistribution dist, double za, double zb) {
  if (!(za <= zb)) throw std::invalid_argument("interval endpoints out of order");
  if (za == zb) return -kInf;
  if (zb == kInf) return base_log_survival(dist, za);
  if (za == -kInf) return base_log_cdf(dist, zb);
  if (za > 0.0) {
    const double lsa = base_log_survival(dist, za);
    return lsa + log1mexp(base_log_survival(dist, zb) - lsa);
  }
  const double lfb = base_log_cdf(dist, zb);
  return lfb + log1mexp(base_log_cdf(dist, za) - lfb);
}

double base_dist_quantile(BaseDistribution dist, double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("quantile probability must lie in (0, 1)");
  switch (dist) {
    case BaseDistribution::StandardNormal:
      return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
    case BaseDistribution::StandardLogistic: return std::log(p) - std::log1p(-p);
    case BaseDistribution::StandardMinExtremeValue: return std::log(-std::log1p(-p));
  }
  return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace trafo
