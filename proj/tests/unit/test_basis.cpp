#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "helpers.hpp"
#include "trafo/basis.hpp"
#include "trafo/errors.hpp"

using namespace trafo;

namespace {

const BaseDistribution kDists[] = {BaseDistribution::StandardNormal, BaseDistribution::StandardLogistic,
                                   BaseDistribution::StandardMinExtremeValue};

}  // namespace

TEST(SupportInterval, RejectsBadBounds) {
  EXPECT_THROW(SupportInterval(1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(SupportInterval(2.0, 1.0), std::invalid_argument);
  EXPECT_THROW(SupportInterval(0.0, INFINITY), std::invalid_argument);
  EXPECT_DOUBLE_EQ(SupportInterval(-2.0, 2.0).width(), 4.0);
}

TEST(BasisEval, OrderOneAtZero) {
  BernsteinBasis b(1, SupportInterval(0.0, 1.0));
  const auto a = b.eval(0.0);
  EXPECT_EQ(a.size(), 2);
  EXPECT_DOUBLE_EQ(a[0], 1.0);
  EXPECT_DOUBLE_EQ(a[1], 0.0);
}

TEST(BasisEval, OrderOneAtQuarterMatchesBetaDensities) {
  // Beta(1,2) density at .25 is 1.5, Beta(2,1) is 0.5; both divided by M + 1 = 2.
  BernsteinBasis b(1, SupportInterval(0.0, 1.0));
  const auto a = b.eval(0.25);
  EXPECT_NEAR(a[0], 1.5 / 2.0, 1e-15);
  EXPECT_NEAR(a[1], 0.5 / 2.0, 1e-15);
}

TEST(BasisEval, MatchesBetaDensityFormula) {
  const int M = 7;
  BernsteinBasis b(M, SupportInterval(-1.0, 3.0));
  for (double y : {-0.7, 0.1, 1.3, 2.9}) {
    const double t = (y + 1.0) / 4.0;
    const auto a = b.eval(y);
    for (int m = 0; m <= M; ++m) {
      const double alpha = m + 1, beta = M - m + 1;
      const double log_beta = std::lgamma(alpha) + std::lgamma(beta) - std::lgamma(alpha + beta);
      const double dens = std::exp((alpha - 1) * std::log(t) + (beta - 1) * std::log1p(-t) - log_beta);
      EXPECT_NEAR(a[m], dens / (M + 1), 1e-12);
    }
  }
}

TEST(BasisEval, PartitionOfUnityAndNonNegative) {
  for (int M : {1, 2, 5, 10, 19, 40}) {
    BernsteinBasis b(M, SupportInterval(-3.0, 7.0));
    for (int k = 0; k <= 200; ++k) {
      const double y = -3.0 + 10.0 * k / 200.0;
      const auto a = b.eval(y);
      EXPECT_NEAR(a.sum(), 1.0, 1e-12) << "M=" << M << " y=" << y;
      EXPECT_GE(a.minCoeff(), 0.0);
    }
  }
}

TEST(BasisEval, EndpointInterpolation) {
  BernsteinBasis b(6, SupportInterval(2.0, 5.0));
  const auto lo = b.eval(2.0), hi = b.eval(5.0);
  for (int m = 0; m <= 6; ++m) {
    EXPECT_DOUBLE_EQ(lo[m], m == 0 ? 1.0 : 0.0);
    EXPECT_DOUBLE_EQ(hi[m], m == 6 ? 1.0 : 0.0);
  }
}

TEST(BasisEval, ConstantCoefficientsGiveConstantTransform) {
  BernsteinBasis b(5, SupportInterval(0.0, 2.0));
  const Eigen::VectorXd theta = Eigen::VectorXd::Constant(6, 1.7);
  for (double y : {0.0, 0.3, 1.1, 2.0}) EXPECT_NEAR(b.eval(y).dot(theta), 1.7, 1e-12);
}

TEST(BasisEval, OutsideSupportThrows) {
  BernsteinBasis b(3, SupportInterval(0.0, 1.0));
  EXPECT_THROW(b.eval(-1e-9), OutOfSupportError);
  EXPECT_THROW(b.eval(1.5), OutOfSupportError);
  EXPECT_THROW(b.deriv(2.0), OutOfSupportError);
}

TEST(BasisDeriv, UnitSupportIdentity) {
  BernsteinBasis b(1, SupportInterval(0.0, 1.0));
  const Eigen::Vector2d theta(0.0, 1.0);
  for (double y : {0.0, 0.4, 1.0}) EXPECT_NEAR(b.deriv(y).dot(theta), 1.0, 1e-14);
}

TEST(BasisDeriv, ChainRuleOnWiderSupport) {
  BernsteinBasis b(1, SupportInterval(-2.0, 2.0));
  const Eigen::Vector2d theta(0.0, 1.0);
  EXPECT_NEAR(b.deriv(0.3).dot(theta), 0.25, 1e-14);
}

TEST(BasisDeriv, MatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> order(1, 6);
  for (int rep = 0; rep < 200; ++rep) {
    const int M = order(rng);
    std::uniform_real_distribution<double> lo_d(-5.0, 5.0), w_d(0.5, 10.0);
    const double lo = lo_d(rng), hi = lo + w_d(rng);
    BernsteinBasis b(M, SupportInterval(lo, hi));
    const auto theta = test_util::random_increasing(M + 1, rng);
    std::uniform_real_distribution<double> y_d(lo + 0.01 * (hi - lo), hi - 0.01 * (hi - lo));
    const double y = y_d(rng);
    const double h = 1e-5 * (hi - lo);
    const double fd = (b.eval(y + h).dot(theta) - b.eval(y - h).dot(theta)) / (2 * h);
    const double an = b.deriv(y).dot(theta);
    EXPECT_NEAR(an, fd, 1e-6 * std::abs(fd)) << "M=" << M;
  }
}

TEST(BasisDeriv, PositiveForIncreasingCoefficients) {
  std::mt19937_64 rng(11);
  for (int M : {1, 3, 5, 9}) {
    BernsteinBasis b(M, SupportInterval(-1.0, 4.0));
    for (int rep = 0; rep < 10; ++rep) {
      const auto theta = test_util::random_increasing(M + 1, rng);
      for (int k = 0; k <= 100; ++k) EXPECT_GT(b.deriv(-1.0 + 5.0 * k / 100.0).dot(theta), 0.0);
    }
  }
}

TEST(BaseDist, NormalAtZero) {
  const auto d = base_dist_eval(BaseDistribution::StandardNormal, 0.0);
  EXPECT_NEAR(d.cdf, 0.5, 1e-15);
  EXPECT_NEAR(d.pdf, 1.0 / std::sqrt(2 * std::numbers::pi), 1e-15);
  EXPECT_EQ(d.dlogpdf, 0.0);
}

TEST(BaseDist, LogisticAtZero) {
  const auto d = base_dist_eval(BaseDistribution::StandardLogistic, 0.0);
  EXPECT_NEAR(d.cdf, 0.5, 1e-15);
  EXPECT_NEAR(d.pdf, 0.25, 1e-15);
  EXPECT_NEAR(d.dlogpdf, 0.0, 1e-15);
}

TEST(BaseDist, MinExtremeValueAtZero) {
  const auto d = base_dist_eval(BaseDistribution::StandardMinExtremeValue, 0.0);
  EXPECT_NEAR(d.cdf, 1.0 - std::exp(-1.0), 1e-15);
  EXPECT_NEAR(d.pdf, std::exp(-1.0), 1e-15);
  EXPECT_NEAR(d.dlogpdf, 0.0, 1e-15);
}

TEST(BaseDist, DlogpdfMatchesFiniteDifference) {
  for (auto dist : kDists) {
    for (double z : {-4.0, -1.3, 0.2, 2.5}) {
      const double h = 1e-5;
      const double fd = (base_log_pdf(dist, z + h) - base_log_pdf(dist, z - h)) / (2 * h);
      EXPECT_NEAR(base_dlogpdf(dist, z), fd, 1e-7 * std::max(1.0, std::abs(fd)));
      const double fd2 = (base_dlogpdf(dist, z + h) - base_dlogpdf(dist, z - h)) / (2 * h);
      EXPECT_NEAR(base_d2logpdf(dist, z), fd2, 1e-6 * std::max(1.0, std::abs(fd2)));
    }
  }
}

TEST(BaseDist, PdfIsDerivativeOfCdf) {
  for (auto dist : kDists) {
    for (double z : {-3.0, -0.5, 0.0, 1.7}) {
      const double h = 1e-5;
      const double fd = (base_dist_eval(dist, z + h).cdf - base_dist_eval(dist, z - h).cdf) / (2 * h);
      EXPECT_NEAR(base_dist_eval(dist, z).pdf, fd, 1e-8);
    }
  }
}

TEST(BaseDist, LogSpaceTailsStayFinite) {
  for (auto dist : kDists) {
    for (double z : {-200.0, -40.0, 40.0, 200.0}) {
      EXPECT_TRUE(std::isfinite(base_log_pdf(dist, z)) || dist == BaseDistribution::StandardMinExtremeValue);
      const double lc = base_log_cdf(dist, z), ls = base_log_survival(dist, z);
      EXPECT_FALSE(std::isnan(lc));
      EXPECT_FALSE(std::isnan(ls));
      EXPECT_LE(lc, 0.0);
      EXPECT_LE(ls, 0.0);
    }
  }
  // Normal lower tail: asymptotic branch continues the direct formula.
  const double inside = base_log_cdf(BaseDistribution::StandardNormal, -29.999);
  const double outside = base_log_cdf(BaseDistribution::StandardNormal, -30.001);
  const double slope = 30.0;  // d/dz log Phi(z) ~ -z in the tail
  EXPECT_NEAR(inside - outside, slope * 0.002, 1e-3);
  EXPECT_TRUE(std::isfinite(base_log_cdf(BaseDistribution::StandardNormal, -40.0)));
  EXPECT_LT(base_log_cdf(BaseDistribution::StandardNormal, -40.0), -800.0);
}

TEST(BaseDist, IntervalMassMatchesDifferenceOfCdfs) {
  for (auto dist : kDists) {
    const double za = -0.4, zb = 1.1;
    const double direct = base_dist_eval(dist, zb).cdf - base_dist_eval(dist, za).cdf;
    EXPECT_NEAR(std::exp(base_log_interval_mass(dist, za, zb)), direct, 1e-14);
    // Far tail: the direct difference underflows, log-space does not.
    EXPECT_TRUE(std::isfinite(base_log_interval_mass(dist, 35.0, 36.0)) ||
                dist == BaseDistribution::StandardMinExtremeValue);
  }
}

TEST(BaseQuantile, Examples) {
  EXPECT_NEAR(base_dist_quantile(BaseDistribution::StandardLogistic, 0.5), 0.0, 1e-15);
  EXPECT_NEAR(base_dist_quantile(BaseDistribution::StandardNormal, 0.95), 1.6448536269514722, 1e-12);
  EXPECT_NEAR(base_dist_quantile(BaseDistribution::StandardMinExtremeValue, 1.0 - std::exp(-1.0)), 0.0, 1e-12);
}

TEST(BaseQuantile, DomainErrors) {
  for (auto dist : kDists) {
    EXPECT_THROW(base_dist_quantile(dist, 0.0), std::domain_error);
    EXPECT_THROW(base_dist_quantile(dist, 1.0), std::domain_error);
    EXPECT_THROW(base_dist_quantile(dist, -0.2), std::domain_error);
  }
}

TEST(BaseQuantile, RoundTrip) {
  for (auto dist : kDists) {
    for (double z = -6.0; z <= 3.0; z += 0.25) {
      const double p = base_dist_eval(dist, z).cdf;
      EXPECT_NEAR(base_dist_quantile(dist, p), z, 1e-8);
      EXPECT_NEAR(base_dist_eval(dist, base_dist_quantile(dist, p)).cdf, p, 1e-10);
    }
  }
}

TEST(BaseDist, NamesRoundTrip) {
  for (auto dist : kDists) EXPECT_EQ(parse_distribution(to_string(dist)), dist);
  EXPECT_FALSE(parse_distribution("cauchy").has_value());
}
