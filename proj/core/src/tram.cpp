#include "trafo/tram.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "trafo/errors.hpp"

namespace trafo {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool is_finite_bound(double v) { return std::isfinite(v); }

// Precomputed design for a weighted log-likelihood. Exact observations carry
// a(y) and a'(y); everything else (censoring intervals, and truncation
// intervals with negated weight) is a probability-mass term.
class LogLikTerms {
 public:
  LogLikTerms(const ModelSpec& spec, std::span<const Response> responses,
              std::span<const double> weights)
      : dist_(spec.dist), dim_(spec.basis.dim()) {
    const auto n = responses.size();
    std::vector<std::size_t> exact, mass;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(weights[i] > 0.0)) continue;
      if (responses[i].is_exact()) exact.push_back(i);
      else mass.push_back(i);
    }
    std::size_t n_trunc = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (weights[i] > 0.0 && responses[i].is_truncated()) ++n_trunc;

    exact_a_.resize(static_cast<Eigen::Index>(exact.size()), dim_);
    exact_ad_.resize(static_cast<Eigen::Index>(exact.size()), dim_);
    exact_w_.resize(static_cast<Eigen::Index>(exact.size()));
    Eigen::VectorXd a(dim_), ad(dim_);
    for (std::size_t r = 0; r < exact.size(); ++r) {
      const auto& resp = responses[exact[r]];
      basis_with_extrapolation(spec.basis, resp.low, a, ad);
      exact_a_.row(static_cast<Eigen::Index>(r)) = a.transpose();
      exact_ad_.row(static_cast<Eigen::Index>(r)) = ad.transpose();
      exact_w_[static_cast<Eigen::Index>(r)] = weights[exact[r]];
    }

    const auto n_mass = static_cast<Eigen::Index>(mass.size() + n_trunc);
    mass_lo_.setZero(n_mass, dim_);
    mass_hi_.setZero(n_mass, dim_);
    mass_w_.resize(n_mass);
    lo_finite_.assign(static_cast<std::size_t>(n_mass), false);
    hi_finite_.assign(static_cast<std::size_t>(n_mass), false);
    Eigen::Index r = 0;
    auto push = [&](double lo, double hi, double w) {
      if (!(lo < hi)) throw std::invalid_argument("censoring interval must satisfy low < high");
      if (is_finite_bound(lo)) {
        basis_with_extrapolation(spec.basis, lo, a, ad);
        mass_lo_.row(r) = a.transpose();
        lo_finite_[static_cast<std::size_t>(r)] = true;
      }
      if (is_finite_bound(hi)) {
        basis_with_extrapolation(spec.basis, hi, a, ad);
        mass_hi_.row(r) = a.transpose();
        hi_finite_[static_cast<std::size_t>(r)] = true;
      }
      mass_w_[r] = w;
      ++r;
    };
    for (auto i : mass) push(responses[i].low, responses[i].high, weights[i]);
    for (std::size_t i = 0; i < n; ++i) {
      if (weights[i] > 0.0 && responses[i].is_truncated())
        push(responses[i].trunc_low, responses[i].trunc_high, -weights[i]);
    }
  }

  // Weighted log-likelihood; gradient and Hessian when requested.
  double eval(const Eigen::VectorXd& theta, Eigen::VectorXd* grad, Eigen::MatrixXd* hess) const {
    double total = 0.0;
    if (grad) grad->setZero(dim_);
    if (hess) hess->setZero(dim_, dim_);

    if (exact_w_.size() > 0) {
      const Eigen::VectorXd z = exact_a_ * theta;
      const Eigen::VectorXd d = exact_ad_ * theta;
      Eigen::VectorXd c1(z.size()), c2(z.size()), h1(z.size()), h2(z.size());
      for (Eigen::Index i = 0; i < z.size(); ++i) {
        if (!(d[i] > 0.0)) return -kInf;
        const double w = exact_w_[i];
        total += w * (base_log_pdf(dist_, z[i]) + std::log(d[i]));
        c1[i] = w * base_dlogpdf(dist_, z[i]);
        c2[i] = w / d[i];
        if (hess) {
          h1[i] = w * base_d2logpdf(dist_, z[i]);
          h2[i] = -w / (d[i] * d[i]);
        }
      }
      if (grad) *grad += exact_a_.transpose() * c1 + exact_ad_.transpose() * c2;
      if (hess) {
        hess->noalias() += exact_a_.transpose() * h1.asDiagonal() * exact_a_;
        hess->noalias() += exact_ad_.transpose() * h2.asDiagonal() * exact_ad_;
      }
    }

    Eigen::VectorXd g(dim_);
    for (Eigen::Index r = 0; r < mass_w_.size(); ++r) {
      const auto ur = static_cast<std::size_t>(r);
      const double za = lo_finite_[ur] ? mass_lo_.row(r).dot(theta) : -kInf;
      const double zb = hi_finite_[ur] ? mass_hi_.row(r).dot(theta) : kInf;
      if (!(za < zb)) return -kInf;
      const double lm = base_log_interval_mass(dist_, za, zb);
      if (!std::isfinite(lm)) return -kInf;
      const double w = mass_w_[r];
      total += w * lm;
      if (!grad && !hess) continue;
      const double ra = lo_finite_[ur] ? std::exp(base_log_pdf(dist_, za) - lm) : 0.0;
      const double rb = hi_finite_[ur] ? std::exp(base_log_pdf(dist_, zb) - lm) : 0.0;
      g.setZero();
      if (hi_finite_[ur]) g += rb * mass_hi_.row(r).transpose();
      if (lo_finite_[ur]) g -= ra * mass_lo_.row(r).transpose();
      if (grad) *grad += w * g;
      if (hess) {
        if (hi_finite_[ur]) {
          hess->noalias() += (w * rb * base_dlogpdf(dist_, zb)) *
                             (mass_hi_.row(r).transpose() * mass_hi_.row(r));
        }
        if (lo_finite_[ur]) {
          hess->noalias() -= (w * ra * base_dlogpdf(dist_, za)) *
                             (mass_lo_.row(r).transpose() * mass_lo_.row(r));
        }
        hess->noalias() -= w * (g * g.transpose());
      }
    }
    return total;
  }

 private:
  BaseDistribution dist_;
  Eigen::Index dim_;
  Eigen::MatrixXd exact_a_, exact_ad_;
  Eigen::VectorXd exact_w_;
  Eigen::MatrixXd mass_lo_, mass_hi_;
  Eigen::VectorXd mass_w_;
  std::vector<bool> lo_finite_, hi_finite_;
};

// theta_0 = gamma_0, theta_m = theta_{m-1} + gap + exp(gamma_m)
Eigen::VectorXd theta_from_gamma(const Eigen::VectorXd& gamma, double gap) {
  Eigen::VectorXd theta(gamma.size());
  theta[0] = gamma[0];
  for (Eigen::Index m = 1; m < gamma.size(); ++m)
    theta[m] = theta[m - 1] + gap + std::exp(gamma[m]);
  return theta;
}

Eigen::VectorXd gamma_from_theta(const Eigen::VectorXd& theta, double gap) {
  Eigen::VectorXd gamma(theta.size());
  gamma[0] = theta[0];
  for (Eigen::Index m = 1; m < theta.size(); ++m)
    gamma[m] = std::log(std::max(theta[m] - theta[m - 1] - gap, 1e-12));
  return gamma;
}

std::size_t distinct_informative(std::span<const Response> responses,
                                 std::span<const double> weights) {
  std::vector<std::tuple<int, double, double, double, double>> keys;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    if (!(weights[i] > 0.0)) continue;
    const auto& r = responses[i];
    keys.emplace_back(static_cast<int>(r.status), r.low, r.high, r.trunc_low, r.trunc_high);
  }
  std::sort(keys.begin(), keys.end());
  return static_cast<std::size_t>(std::unique(keys.begin(), keys.end()) - keys.begin());
}

}  // namespace

Response Response::exact(double y) {
  if (!std::isfinite(y)) throw std::invalid_argument("exact response must be finite");
  return {CensoringStatus::Exact, y, y};
}

Response Response::interval(double low, double high) {
  if (!std::isfinite(low) || !std::isfinite(high) || !(low < high))
    throw std::invalid_argument("interval-censored response needs finite low < high");
  return {CensoringStatus::IntervalCensored, low, high};
}

Response Response::left_censored(double high) {
  if (!std::isfinite(high)) throw std::invalid_argument("left-censoring bound must be finite");
  return {CensoringStatus::LeftCensored, -kInf, high};
}

Response Response::right_censored(double low) {
  if (!std::isfinite(low)) throw std::invalid_argument("right-censoring bound must be finite");
  return {CensoringStatus::RightCensored, low, kInf};
}

Response Response::truncated(double lower, double upper) const {
  if (!(lower < upper)) throw std::invalid_argument("truncation bounds need lower < upper");
  Response out = *this;
  if (is_exact()) {
    if (!(lower < low && low <= upper))
      throw std::invalid_argument("observation lies outside its truncation interval");
  } else {
    // Censoring sets are intersected with the truncation window.
    out.low = std::max(low, lower);
    out.high = std::min(high, upper);
    if (!(out.low < out.high))
      throw std::invalid_argument("observation lies outside its truncation interval");
  }
  out.trunc_low = lower;
  out.trunc_high = upper;
  return out;
}

Dataset::Dataset(std::vector<Response> responses, Eigen::MatrixXd predictors,
                 std::vector<Column> columns)
    : responses_(std::move(responses)),
      predictors_(std::move(predictors)),
      columns_(std::move(columns)) {
  if (responses_.empty()) throw std::invalid_argument("dataset needs at least one observation");
  if (static_cast<std::size_t>(predictors_.rows()) != responses_.size())
    throw std::invalid_argument("predictor rows do not match response count");
  if (static_cast<std::size_t>(predictors_.cols()) != columns_.size())
    throw std::invalid_argument("predictor columns do not match schema");
  if (columns_.empty()) throw std::invalid_argument("dataset needs at least one predictor");
  if (!predictors_.allFinite()) throw std::invalid_argument("predictors contain missing values");
}

Dataset Dataset::with_default_columns(std::vector<Response> responses, Eigen::MatrixXd predictors) {
  std::vector<Column> cols;
  for (Eigen::Index j = 0; j < predictors.cols(); ++j)
    cols.push_back({"x" + std::to_string(j + 1), Scale::Continuous, {}});
  return Dataset(std::move(responses), std::move(predictors), std::move(cols));
}

Dataset Dataset::with_responses(std::vector<Response> responses) const {
  return Dataset(std::move(responses), predictors_, columns_);
}

TransformationModel::TransformationModel(BernsteinBasis basis, BaseDistribution dist,
                                         Eigen::VectorXd theta)
    : basis_(std::move(basis)), dist_(dist), theta_(std::move(theta)) {
  if (theta_.size() != basis_.dim())
    throw std::invalid_argument("theta length does not match basis dimension");
  for (Eigen::Index m = 1; m < theta_.size(); ++m) {
    if (!(theta_[m] > theta_[m - 1]))
      throw std::invalid_argument("theta must be strictly increasing");
  }
}

void basis_with_extrapolation(const BernsteinBasis& basis, double y,
                              Eigen::Ref<Eigen::VectorXd> a, Eigen::Ref<Eigen::VectorXd> ad) {
  const auto& s = basis.support();
  if (s.contains(y)) {
    basis.eval_into(y, a);
    basis.deriv_into(y, ad);
    return;
  }
  const double edge = y < s.lower() ? s.lower() : s.upper();
  basis.eval_into(edge, a);
  basis.deriv_into(edge, ad);
  if (std::isfinite(y)) {
    a += (y - edge) * ad;
  } else {
    ad.setZero();
  }
}

double TransformationModel::transform(double y) const {
  if (y == kInf) return kInf;
  if (y == -kInf) return -kInf;
  Eigen::VectorXd a(basis_.dim()), ad(basis_.dim());
  basis_with_extrapolation(basis_, y, a, ad);
  return a.dot(theta_);
}

double TransformationModel::transform_deriv(double y) const {
  Eigen::VectorXd a(basis_.dim()), ad(basis_.dim());
  basis_with_extrapolation(basis_, y, a, ad);
  return ad.dot(theta_);
}

double TransformationModel::cdf(double y) const { return std::exp(base_log_cdf(dist_, transform(y))); }

double TransformationModel::log_density(double y) const {
  Eigen::VectorXd a(basis_.dim()), ad(basis_.dim());
  basis_with_extrapolation(basis_, y, a, ad);
  const double d = ad.dot(theta_);
  if (!(d > 0.0)) return -kInf;
  return base_log_pdf(dist_, a.dot(theta_)) + std::log(d);
}

double TransformationModel::quantile(double p) const {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("quantile probability must lie in (0, 1)");
  const auto& s = basis_.support();
  // Compare on the latent scale: h(y) >= F_Z^{-1}(p) <=> cdf(y) >= p.
  const double target = base_dist_quantile(dist_, p);
  double lo = s.lower(), hi = s.upper();
  if (transform(lo) >= target) return lo;
  if (transform(hi) <= target) return hi;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (transform(mid) < target) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

double log_likelihood(const TransformationModel& model, const Response& resp) {
  const ModelSpec spec{model.basis(), model.dist()};
  const double w = 1.0;
  const LogLikTerms terms(spec, std::span<const Response>(&resp, 1), std::span<const double>(&w, 1));
  const double ll = terms.eval(model.theta(), nullptr, nullptr);
  if (!std::isfinite(ll)) throw DegenerateLikelihoodError("observation has zero likelihood");
  return ll;
}

Eigen::VectorXd score(const TransformationModel& model, const Response& resp) {
  const ModelSpec spec{model.basis(), model.dist()};
  const double w = 1.0;
  const LogLikTerms terms(spec, std::span<const Response>(&resp, 1), std::span<const double>(&w, 1));
  Eigen::VectorXd g;
  const double ll = terms.eval(model.theta(), &g, nullptr);
  if (!std::isfinite(ll)) throw DegenerateLikelihoodError("observation has zero likelihood");
  return g;
}

Eigen::MatrixXd score_matrix(const TransformationModel& model, std::span<const Response> resp,
                             std::span<const std::size_t> rows) {
  const auto p = model.basis().dim();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), p);
  const auto dist = model.dist();
  const auto& theta = model.theta();
  Eigen::VectorXd a(p), ad(p), b(p), bd(p);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Response& y = resp[rows[r]];
    auto row = out.row(static_cast<Eigen::Index>(r));
    if (y.is_exact() && !y.is_truncated()) {
      // Fast path for the common case.
      basis_with_extrapolation(model.basis(), y.low, a, ad);
      const double d = ad.dot(theta);
      if (!(d > 0.0)) throw DegenerateLikelihoodError("non-positive transformation derivative");
      row = (a * base_dlogpdf(dist, a.dot(theta)) + ad / d).transpose();
    } else {
      row = score(model, y).transpose();
    }
  }
  return out;
}

SupportInterval default_support(std::span<const Response> responses) {
  double lo = kInf, hi = -kInf;
  for (const auto& r : responses) {
    for (double v : {r.low, r.high}) {
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  if (!std::isfinite(lo)) throw std::invalid_argument("no finite response values to span a support");
  double range = hi - lo;
  if (!(range > 0.0)) range = std::max(1.0, std::abs(lo));
  return {lo - 0.05 * range, hi + 0.05 * range};
}

Eigen::VectorXd initial_theta(const ModelSpec& spec) {
  const double lo = base_dist_quantile(spec.dist, 0.1);
  const double hi = base_dist_quantile(spec.dist, 0.9);
  return Eigen::VectorXd::LinSpaced(spec.basis.dim(), lo, hi);
}

double weighted_log_likelihood(const TransformationModel& model,
                               std::span<const Response> responses,
                               std::span<const double> weights) {
  const LogLikTerms terms({model.basis(), model.dist()}, responses, weights);
  return terms.eval(model.theta(), nullptr, nullptr);
}

FitResult fit_mle(const ModelSpec& spec, std::span<const Response> responses,
                  std::span<const double> weights, const OptimizerOptions& options,
                  const Eigen::VectorXd* start) {
  if (responses.size() != weights.size())
    throw std::invalid_argument("weights and responses differ in length");
  double total_weight = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("weights must be finite and >= 0");
    total_weight += w;
  }
  if (!(total_weight > 0.0)) throw std::invalid_argument("sum of weights must be positive");
  const auto p = spec.basis.dim();
  if (distinct_informative(responses, weights) < static_cast<std::size_t>(p)) {
    std::ostringstream msg;
    msg << "fewer than " << p << " distinct positively weighted observations";
    throw RankDeficiencyError(msg.str());
  }

  // Normalised weights make the objective invariant to weight scaling.
  std::vector<double> w(weights.begin(), weights.end());
  for (auto& v : w) v /= total_weight;
  const LogLikTerms terms(spec, responses, w);
  const double gap = options.gap_tol;

  Eigen::VectorXd gamma = gamma_from_theta(initial_theta(spec), gap);
  double f = -terms.eval(theta_from_gamma(gamma, gap), nullptr, nullptr);
  if (start != nullptr && start->size() == p) {
    const Eigen::VectorXd g0 = gamma_from_theta(*start, gap);
    const double f0 = -terms.eval(theta_from_gamma(g0, gap), nullptr, nullptr);
    if (std::isfinite(f0) && (!std::isfinite(f) || f0 < f)) {
      gamma = g0;
      f = f0;
    }
  }
  if (!std::isfinite(f)) throw DegenerateLikelihoodError("zero likelihood at the starting point");

  Eigen::VectorXd g_theta(p), grad(p);
  Eigen::MatrixXd h_theta(p, p), hess(p, p), jac(p, p);
  int iter = 0;
  bool converged = false;
  for (; iter < options.max_iter; ++iter) {
    const Eigen::VectorXd theta = theta_from_gamma(gamma, gap);
    terms.eval(theta, &g_theta, &h_theta);
    g_theta = -g_theta;
    h_theta = -h_theta;

    // Chain rule through the cumulative-exp reparameterisation.
    jac.setZero();
    jac.col(0).setOnes();
    for (Eigen::Index m = 1; m < p; ++m) jac.col(m).tail(p - m).setConstant(std::exp(gamma[m]));
    grad.noalias() = jac.transpose() * g_theta;
    hess.noalias() = jac.transpose() * h_theta * jac;
    for (Eigen::Index m = 1; m < p; ++m) hess(m, m) += std::exp(gamma[m]) * g_theta.tail(p - m).sum();

    if (grad.lpNorm<Eigen::Infinity>() < options.grad_tol) {
      converged = true;
      break;
    }

    // Damped Newton: shift the Hessian until it is positive definite.
    Eigen::VectorXd step;
    double lambda = 0.0;
    const double scale = std::max(1.0, hess.diagonal().cwiseAbs().maxCoeff());
    for (int attempt = 0; attempt < 60; ++attempt) {
      Eigen::LLT<Eigen::MatrixXd> llt(hess + lambda * Eigen::MatrixXd::Identity(p, p));
      if (llt.info() == Eigen::Success) {
        step = -llt.solve(grad);
        if (step.allFinite() && step.dot(grad) < 0.0) break;
      }
      step.resize(0);
      lambda = lambda == 0.0 ? 1e-8 * scale : lambda * 10.0;
    }
    if (step.size() == 0) step = -grad;
    const double max_step = step.lpNorm<Eigen::Infinity>();
    if (max_step > 5.0) step *= 5.0 / max_step;

    const double slope = grad.dot(step);
    double t = 1.0;
    double f_new = kInf;
    Eigen::VectorXd candidate;
    for (int halving = 0; halving < 50; ++halving) {
      candidate = gamma + t * step;
      f_new = -terms.eval(theta_from_gamma(candidate, gap), nullptr, nullptr);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * t * slope) break;
      t *= 0.5;
    }
    if (!std::isfinite(f_new) || f_new > f) {
      // No descent possible at working precision.
      converged = true;
      break;
    }
    const double change = std::abs(f - f_new) / std::max(std::abs(f), 1e-10);
    gamma = candidate;
    f = f_new;
    if (t == 1.0 && change < options.rel_tol) {
      converged = true;
      ++iter;
      break;
    }
  }

  Eigen::VectorXd theta = theta_from_gamma(gamma, gap);
  if (!converged) throw ConvergenceError("maximum likelihood did not converge", theta);
  TransformationModel model(spec.basis, spec.dist, std::move(theta));
  return {std::move(model), -f * total_weight, iter};
}

}  // namespace trafo
