#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "trafo/tram.hpp"

namespace trafo::test_util {

/// Central finite-difference gradient.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-6) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd a = x, b = x;
    const double step = h * std::max(1.0, std::abs(x[k]));
    a[k] += step;
    b[k] -= step;
    g[k] = (f(a) - f(b)) / (2.0 * step);
  }
  return g;
}

/// M = 1 model with h(y) = (y - mu) / sigma on [lo, hi].
inline TransformationModel affine_model(double lo, double hi, double mu = 0.0, double sigma = 1.0,
                                        BaseDistribution dist = BaseDistribution::StandardNormal) {
  Eigen::VectorXd theta(2);
  theta << (lo - mu) / sigma, (hi - mu) / sigma;
  return {BernsteinBasis(1, SupportInterval(lo, hi)), dist, theta};
}

/// Random strictly increasing vector of length p.
template <typename Rng>
Eigen::VectorXd random_increasing(int p, Rng& rng, double start = -2.0) {
  std::uniform_real_distribution<double> gap(0.2, 1.5);
  Eigen::VectorXd theta(p);
  theta[0] = start;
  for (int m = 1; m < p; ++m) theta[m] = theta[m - 1] + gap(rng);
  return theta;
}

template <typename Rng>
std::vector<Response> normal_sample(std::size_t n, Rng& rng, double mu = 0.0, double sigma = 1.0) {
  std::normal_distribution<double> z(mu, sigma);
  std::vector<Response> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(Response::exact(z(rng)));
  return out;
}

inline std::vector<double> ones(std::size_t n) { return std::vector<double>(n, 1.0); }

}  // namespace trafo::test_util
