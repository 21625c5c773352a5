#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trafo/forest.hpp"

namespace trafo {

double friedman1(double x1, double x2, double x3, double x4, double x5);
/// friedman1 mapped affinely from its range [0, 30] onto [-1.5, 1.5].
double friedman1_star(double x1, double x2, double x3, double x4, double x5);

enum class DgpFamily { TreeNormal, TreeLogNormal, FriedmanNormal, FriedmanLogNormal };
enum class Effect { None, MeanOnly, VarianceOnly, MeanAndVariance };
enum class Dim { Low, High };

std::string_view to_string(DgpFamily f);
std::string_view to_string(Effect e);
std::string_view to_string(Dim d);
std::optional<DgpFamily> parse_family(std::string_view s);
std::optional<Effect> parse_effect(std::string_view s);
std::optional<Dim> parse_dim(std::string_view s);

struct DgpSpec {
  DgpFamily family = DgpFamily::TreeNormal;
  Effect effect = Effect::None;
  Dim dim = Dim::Low;
  std::size_t n_learn = 250;
  std::size_t n_test = 250;
  std::uint64_t seed = 42;

  std::size_t n_predictors() const;
  bool lognormal() const;
  /// Learning-sample sizes of the original study for this family.
  static std::size_t default_n_learn(DgpFamily family);
};

/// True conditional parameters of each generated row. For log-normal
/// families they are the parameters of log(y).
struct TruthOracle {
  std::vector<double> mean;
  std::vector<double> sd;
  bool lognormal = false;

  double log_density(std::size_t i, double y) const;
  double cdf(std::size_t i, double y) const;
  double quantile(std::size_t i, double tau) const;
};

struct Simulated {
  Dataset data;
  TruthOracle truth;
};

/// Conditional mean and SD at a predictor row (normal scale).
std::pair<double, double> true_parameters(const DgpSpec& spec, std::span<const double> x);

Simulated generate(const DgpSpec& spec, std::size_t n, Rng& rng);
inline Simulated generate(const DgpSpec& spec, Rng& rng) { return generate(spec, spec.n_learn, rng); }

/// Summed negative log-likelihood of the competitor minus that of the truth.
double nll_difference(std::span<const TransformationModel> models, const TruthOracle& truth,
                      std::span<const Response> responses);

double check_loss(double u, double tau);
/// Mean check loss of predicted minus true quantiles.
double check_risk(std::span<const double> predicted, std::span<const double> truth,
                  std::span<const double> y, double tau);

/// Smallest y whose normalised cumulative weight reaches tau.
double weighted_ecdf_quantile(std::span<const double> ys, std::span<const double> weights,
                              double tau);

/// Method names accepted by the benchmark runner.
const std::vector<std::string>& benchmark_methods();

struct BenchmarkRecord {
  std::string dgp;
  std::string effect;
  std::string dim;
  std::string method;
  std::size_t rep = 0;
  std::optional<double> nll_diff;
  std::optional<double> q10_risk;
  std::optional<double> abs_err;  // check risk at tau = 0.5
  std::optional<double> q90_risk;
  std::optional<double> fit_ms;
  std::optional<double> predict_ms;
  std::string error;
};

struct BenchmarkOptions {
  std::vector<DgpSpec> specs;
  std::vector<std::string> methods;
  std::size_t reps = 1;
  std::uint64_t seed = 42;
  std::size_t n_trees = 100;
  /// Record wall times; off gives seed-reproducible tables.
  bool timing = true;
  unsigned threads = 1;
};

std::vector<BenchmarkRecord> run_benchmark(const BenchmarkOptions& options);

void write_benchmark_table(std::ostream& out, const std::vector<BenchmarkRecord>& records,
                           char delimiter = ',');
/// Median of every metric per (dgp, effect, dim, method).
void write_benchmark_summary(std::ostream& out, const std::vector<BenchmarkRecord>& records,
                             char delimiter = ',');

/// Shortest decimal that reads back to the same double.
std::string format_double(double v);

}  // namespace trafo
