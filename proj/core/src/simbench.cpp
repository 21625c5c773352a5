#include "trafo/simbench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <map>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <tuple>

#include "trafo/errors.hpp"

namespace trafo {

double friedman1(double x1, double x2, double x3, double x4, double x5) {
  return 10.0 * std::sin(std::numbers::pi * x1 * x2) + 20.0 * (x3 - 0.5) * (x3 - 0.5) + 10.0 * x4 +
         5.0 * x5;
}

double friedman1_star(double x1, double x2, double x3, double x4, double x5) {
  return friedman1(x1, x2, x3, x4, x5) / 10.0 - 1.5;
}

std::string_view to_string(DgpFamily f) {
  switch (f) {
    case DgpFamily::TreeNormal: return "tree";
    case DgpFamily::TreeLogNormal: return "treelognormal";
    case DgpFamily::FriedmanNormal: return "friedman";
    case DgpFamily::FriedmanLogNormal: return "friedmanlognormal";
  }
  return "unknown";
}

std::string_view to_string(Effect e) {
  switch (e) {
    case Effect::None: return "none";
    case Effect::MeanOnly: return "mean";
    case Effect::VarianceOnly: return "variance";
    case Effect::MeanAndVariance: return "meanvariance";
  }
  return "unknown";
}

std::string_view to_string(Dim d) { return d == Dim::Low ? "low" : "high"; }

std::optional<DgpFamily> parse_family(std::string_view s) {
  for (auto f : {DgpFamily::TreeNormal, DgpFamily::TreeLogNormal, DgpFamily::FriedmanNormal,
                 DgpFamily::FriedmanLogNormal})
    if (s == to_string(f)) return f;
  return std::nullopt;
}

std::optional<Effect> parse_effect(std::string_view s) {
  if (s == "H2a") return Effect::None;
  if (s == "H2b") return Effect::MeanOnly;
  if (s == "H2c") return Effect::VarianceOnly;
  if (s == "H2c+") return Effect::MeanAndVariance;
  for (auto e : {Effect::None, Effect::MeanOnly, Effect::VarianceOnly, Effect::MeanAndVariance})
    if (s == to_string(e)) return e;
  return std::nullopt;
}

std::optional<Dim> parse_dim(std::string_view s) {
  if (s == "low") return Dim::Low;
  if (s == "high") return Dim::High;
  return std::nullopt;
}

namespace {

bool is_tree_family(DgpFamily f) { return f == DgpFamily::TreeNormal || f == DgpFamily::TreeLogNormal; }

bool has_mean(Effect e) { return e == Effect::MeanOnly || e == Effect::MeanAndVariance; }
bool has_variance(Effect e) { return e == Effect::VarianceOnly || e == Effect::MeanAndVariance; }

}  // namespace

std::size_t DgpSpec::n_predictors() const {
  const std::size_t informative = is_tree_family(family) ? 2 : 10;
  const std::size_t noise = dim == Dim::Low ? 5 : 50;
  return informative + noise;
}

bool DgpSpec::lognormal() const {
  return family == DgpFamily::TreeLogNormal || family == DgpFamily::FriedmanLogNormal;
}

std::size_t DgpSpec::default_n_learn(DgpFamily family) {
  switch (family) {
    case DgpFamily::TreeNormal: return 250;
    case DgpFamily::FriedmanNormal: return 500;
    case DgpFamily::TreeLogNormal:
    case DgpFamily::FriedmanLogNormal: return 2500;
  }
  return 250;
}

double TruthOracle::log_density(std::size_t i, double y) const {
  const double mu = mean[i], s = sd[i];
  if (lognormal) {
    if (!(y > 0.0)) return -std::numeric_limits<double>::infinity();
    const double ly = std::log(y);
    return base_log_pdf(BaseDistribution::StandardNormal, (ly - mu) / s) - std::log(s) - ly;
  }
  return base_log_pdf(BaseDistribution::StandardNormal, (y - mu) / s) - std::log(s);
}

double TruthOracle::cdf(std::size_t i, double y) const {
  if (lognormal) {
    if (!(y > 0.0)) return 0.0;
    y = std::log(y);
  }
  return std::exp(base_log_cdf(BaseDistribution::StandardNormal, (y - mean[i]) / sd[i]));
}

double TruthOracle::quantile(std::size_t i, double tau) const {
  const double q = mean[i] + sd[i] * base_dist_quantile(BaseDistribution::StandardNormal, tau);
  return lognormal ? std::exp(q) : q;
}

std::pair<double, double> true_parameters(const DgpSpec& spec, std::span<const double> x) {
  double mu = 0.0, sigma = 1.0;
  if (is_tree_family(spec.family)) {
    if (has_mean(spec.effect)) mu = x[0] > 0.5 ? 1.0 : 0.0;
    if (has_variance(spec.effect)) sigma = 1.0 + (x[1] > 0.5 ? 1.0 : 0.0);
  } else {
    if (has_mean(spec.effect)) mu = friedman1_star(x[0], x[1], x[2], x[3], x[4]);
    if (has_variance(spec.effect)) sigma = std::exp(friedman1_star(x[5], x[6], x[7], x[8], x[9]));
  }
  return {mu, sigma};
}

Simulated generate(const DgpSpec& spec, std::size_t n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample size must be >= 1");
  const std::size_t J = spec.n_predictors();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> norm(0.0, 1.0);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(J));
  std::vector<Response> resp;
  resp.reserve(n);
  TruthOracle truth;
  truth.lognormal = spec.lognormal();
  std::vector<double> row(J);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < J; ++j) {
      row[j] = unif(rng);
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
    }
    const auto [mu, sigma] = true_parameters(spec, row);
    truth.mean.push_back(mu);
    truth.sd.push_back(sigma);
    const double y = mu + sigma * norm(rng);
    resp.push_back(Response::exact(truth.lognormal ? std::exp(y) : y));
  }
  return {Dataset::with_default_columns(std::move(resp), std::move(x)), std::move(truth)};
}

double nll_difference(std::span<const TransformationModel> models, const TruthOracle& truth,
                      std::span<const Response> responses) {
  if (models.size() != responses.size() || truth.mean.size() != responses.size())
    throw std::invalid_argument("models, truth and responses must align");
  double total = 0.0;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    if (!responses[i].is_exact()) throw UnsupportedResponseError("truth density needs exact responses");
    total += -log_likelihood(models[i], responses[i]) + truth.log_density(i, responses[i].low);
  }
  return total;
}

double check_loss(double u, double tau) { return u * (tau - (u < 0.0 ? 1.0 : 0.0)); }

double check_risk(std::span<const double> predicted, std::span<const double> truth,
                  std::span<const double> y, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::domain_error("tau must lie in (0, 1)");
  if (predicted.size() != y.size() || truth.size() != y.size() || y.empty())
    throw std::invalid_argument("check_risk inputs must align and be non-empty");
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    total += check_loss(y[i] - predicted[i], tau) - check_loss(y[i] - truth[i], tau);
  return total / static_cast<double>(y.size());
}

double weighted_ecdf_quantile(std::span<const double> ys, std::span<const double> weights,
                              double tau) {
  if (ys.size() != weights.size()) throw std::invalid_argument("ys and weights differ in length");
  std::vector<std::size_t> idx;
  double total = 0.0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    if (weights[i] < 0.0) throw std::invalid_argument("weights must be >= 0");
    if (weights[i] > 0.0) {
      idx.push_back(i);
      total += weights[i];
    }
  }
  if (!(total > 0.0)) throw UnpredictablePointError("all ECDF weights are zero");
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return ys[a] < ys[b]; });
  double cum = 0.0;
  for (auto i : idx) {
    cum += weights[i];
    if (cum / total >= tau * (1.0 - 1e-12)) return ys[i];
  }
  return ys[idx.back()];
}

const std::vector<std::string>& benchmark_methods() {
  static const std::vector<std::string> names{"ttree1",     "ttree5",     "tforest1",
                                              "tforest5",   "msetree1",   "msetree5",
                                              "mseforest1", "mseforest5", "qrf"};
  return names;
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

struct MethodOutput {
  std::vector<TransformationModel> models;  // empty for qrf
  std::vector<std::vector<double>> quantiles;  // per tau, per test row
};

constexpr double kTaus[3] = {0.1, 0.5, 0.9};

MethodOutput run_method(const std::string& method, const Simulated& learn, const Simulated& test,
                        const BenchmarkOptions& options, std::uint64_t seed, double* fit_ms,
                        double* predict_ms) {
  const int order = method.back() == '5' ? 5 : 1;
  const ModelSpec spec{BernsteinBasis(order, default_support(learn.data.responses())),
                       BaseDistribution::StandardNormal};
  const auto n_test = test.data.size();
  std::vector<std::size_t> all(learn.data.size());
  std::iota(all.begin(), all.end(), 0);
  MethodOutput out;
  out.quantiles.assign(3, std::vector<double>(n_test));

  const auto t0 = Clock::now();
  std::optional<Tree> tree;
  std::optional<Forest> forest;
  auto rng = derived_rng(seed, 1);
  const bool mse = method.rfind("mse", 0) == 0 || method == "qrf";
  if (method.rfind("ttree", 0) == 0) {
    tree = grow_tree(learn.data, all, spec, TreeConfig{}, rng);
  } else if (method.rfind("msetree", 0) == 0) {
    tree = grow_tree_mse(learn.data, all, spec, TreeConfig{}, rng);
  } else {
    ForestConfig fc;
    fc.n_trees = options.n_trees;
    fc.seed = seed;
    fc.threads = options.threads;
    fc.kind = mse ? TreeKind::MSE : TreeKind::Transformation;
    forest = fit_forest(learn.data, spec, fc);
  }
  *fit_ms = ms_since(t0);

  const auto t1 = Clock::now();
  if (method == "qrf") {
    std::vector<double> ys(learn.data.size());
    for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = learn.data.response(i).low;
    for (std::size_t i = 0; i < n_test; ++i) {
      const auto w = forest_weights(*forest, test.data.row(i), WeightMode::InBag);
      for (int k = 0; k < 3; ++k) out.quantiles[static_cast<std::size_t>(k)][i] = weighted_ecdf_quantile(ys, w, kTaus[k]);
    }
  } else {
    out.models.reserve(n_test);
    for (std::size_t i = 0; i < n_test; ++i) {
      const auto x = test.data.row(i);
      out.models.push_back(tree ? tree->model_at(x) : predict_params(*forest, x, WeightMode::InBag));
      for (int k = 0; k < 3; ++k) out.quantiles[static_cast<std::size_t>(k)][i] = out.models.back().quantile(kTaus[k]);
    }
  }
  *predict_ms = ms_since(t1);
  return out;
}

}  // namespace

std::vector<BenchmarkRecord> run_benchmark(const BenchmarkOptions& options) {
  const auto& known = benchmark_methods();
  for (const auto& m : options.methods)
    if (std::find(known.begin(), known.end(), m) == known.end())
      throw std::invalid_argument("unknown benchmark method '" + m + "'");

  std::vector<BenchmarkRecord> records;
  for (std::size_t s = 0; s < options.specs.size(); ++s) {
    const auto& spec = options.specs[s];
    for (std::size_t rep = 0; rep < options.reps; ++rep) {
      const std::uint64_t rep_seed = derived_seed(derived_seed(options.seed, s), rep);
      auto rng = derived_rng(rep_seed, 0);
      const auto learn = generate(spec, spec.n_learn, rng);
      const auto test = generate(spec, spec.n_test, rng);
      std::vector<double> y(test.data.size());
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = test.data.response(i).low;
      std::vector<std::vector<double>> truth_q(3, std::vector<double>(y.size()));
      for (int k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < y.size(); ++i) truth_q[static_cast<std::size_t>(k)][i] = test.truth.quantile(i, kTaus[k]);

      for (std::size_t m = 0; m < options.methods.size(); ++m) {
        const auto& method = options.methods[m];
        BenchmarkRecord rec;
        rec.dgp = to_string(spec.family);
        rec.effect = to_string(spec.effect);
        rec.dim = to_string(spec.dim);
        rec.method = method;
        rec.rep = rep + 1;
        try {
          double fit_ms = 0.0, predict_ms = 0.0;
          const auto out = run_method(method, learn, test, options, derived_seed(rep_seed, m + 1),
                                      &fit_ms, &predict_ms);
          if (!out.models.empty()) rec.nll_diff = nll_difference(out.models, test.truth, test.data.responses());
          rec.q10_risk = check_risk(out.quantiles[0], truth_q[0], y, 0.1);
          rec.abs_err = check_risk(out.quantiles[1], truth_q[1], y, 0.5);
          rec.q90_risk = check_risk(out.quantiles[2], truth_q[2], y, 0.9);
          if (options.timing) {
            rec.fit_ms = fit_ms;
            rec.predict_ms = predict_ms;
          }
        } catch (const std::exception& e) {
          rec.error = e.what();
        }
        records.push_back(std::move(rec));
      }
    }
  }
  return records;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void write_benchmark_table(std::ostream& out, const std::vector<BenchmarkRecord>& records,
                           char d) {
  out << "dgp" << d << "effect" << d << "dim" << d << "method" << d << "rep" << d << "nll_diff" << d
      << "q10_risk" << d << "abs_err" << d << "q90_risk" << d << "fit_ms" << d << "predict_ms\n";
  for (const auto& r : records) {
    out << r.dgp << d << r.effect << d << r.dim << d << r.method << d << r.rep << d
        << cell(r.nll_diff) << d << cell(r.q10_risk) << d << cell(r.abs_err) << d
        << cell(r.q90_risk) << d << cell(r.fit_ms) << d << cell(r.predict_ms) << '\n';
  }
}

void write_benchmark_summary(std::ostream& out, const std::vector<BenchmarkRecord>& records,
                             char d) {
  using Key = std::tuple<std::string, std::string, std::string, std::string>;
  std::vector<Key> order;
  std::map<Key, std::vector<const BenchmarkRecord*>> groups;
  for (const auto& r : records) {
    Key k{r.dgp, r.effect, r.dim, r.method};
    if (!groups.count(k)) order.push_back(k);
    groups[k].push_back(&r);
  }
  out << "dgp" << d << "effect" << d << "dim" << d << "method" << d << "reps" << d << "failed" << d
      << "nll_diff" << d << "q10_risk" << d << "abs_err" << d << "q90_risk" << d << "fit_ms" << d
      << "predict_ms\n";
  for (const auto& k : order) {
    const auto& g = groups[k];
    const auto failed = std::count_if(g.begin(), g.end(), [](auto* r) { return !r->error.empty(); });
    out << std::get<0>(k) << d << std::get<1>(k) << d << std::get<2>(k) << d << std::get<3>(k) << d
        << g.size() << d << failed;
    for (auto field : {&BenchmarkRecord::nll_diff, &BenchmarkRecord::q10_risk, &BenchmarkRecord::abs_err,
                       &BenchmarkRecord::q90_risk, &BenchmarkRecord::fit_ms, &BenchmarkRecord::predict_ms}) {
      std::vector<double> v;
      for (auto* r : g)
        if (r->*field) v.push_back(*(r->*field));
      out << d << (v.empty() ? std::string("NA") : format_double(median(v)));
    }
    out << '\n';
  }
}

}  // namespace trafo
