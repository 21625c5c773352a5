#include "trafo/inference.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

#include "trafo/errors.hpp"

namespace trafo {

PredictionInterval prediction_interval(const TransformationModel& model, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  PredictionInterval pi;
  pi.alpha = alpha;
  pi.lower = model.quantile(0.5 * alpha);
  pi.upper = model.quantile(1.0 - 0.5 * alpha);
  const auto& s = model.basis().support();
  pi.lower_clamped = pi.lower == s.lower() && model.cdf(s.lower()) > 0.5 * alpha;
  pi.upper_clamped = pi.upper == s.upper() && model.cdf(s.upper()) < 1.0 - 0.5 * alpha;
  return pi;
}

ImportanceReport variable_importance(const Forest& forest, std::uint64_t seed,
                                     const ImportanceOptions& options) {
  const auto& data = forest.data();
  const std::size_t J = data.n_predictors();
  const std::size_t T = forest.trees().size();
  ImportanceReport report;
  report.seed = seed;
  report.importance.assign(J, 0.0);

  for (std::size_t t = 0; t < T; ++t) {
    const auto& tree = forest.trees()[t];
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (!options.out_of_bag || !forest.in_bag(t, i)) rows.push_back(i);
    if (rows.empty()) continue;

    double base_loss = 0.0;
    for (auto i : rows) base_loss -= log_likelihood(tree.model_at(data.row(i)), data.response(i));

    for (std::size_t j = 0; j < J; ++j) {
      std::vector<std::size_t> perm(rows);
      if (!options.identity_permutation) {
        auto rng = derived_rng(seed, t, j + 1);
        std::shuffle(perm.begin(), perm.end(), rng);
      }
      double loss = 0.0;
      Eigen::VectorXd x(J);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto i = rows[r];
        x = data.row(i);
        x[static_cast<Eigen::Index>(j)] = data.x(perm[r], j);
        loss -= log_likelihood(tree.model_at(x), data.response(i));
      }
      report.importance[j] += loss - base_loss;
    }
  }
  for (auto& v : report.importance) v /= static_cast<double>(T);
  return report;
}

namespace {

double open_uniform(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    const double v = u(rng);
    if (v > 0.0 && v < 1.0) return v;
  }
}

std::vector<Response> exact_responses(const std::vector<double>& y) {
  std::vector<Response> out;
  out.reserve(y.size());
  for (double v : y) out.push_back(Response::exact(v));
  return out;
}

}  // namespace

std::vector<double> sample_conditional(const Forest& forest, Rng& rng) {
  const auto& data = forest.data();
  std::vector<double> y(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto model = predict_params(forest, data.row(i), WeightMode::InBag);
    y[i] = model.quantile(open_uniform(rng));
  }
  return y;
}

std::vector<Forest> model_based_bootstrap(const Forest& forest, std::size_t K, std::uint64_t seed) {
  if (K < 1) throw std::invalid_argument("bootstrap needs K >= 1");
  const auto& data = forest.data();
  std::vector<TransformationModel> models;
  models.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    models.push_back(predict_params(forest, data.row(i), WeightMode::InBag));

  std::vector<Forest> out;
  out.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    auto rng = derived_rng(seed, k);
    std::vector<double> y(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) y[i] = models[i].quantile(open_uniform(rng));
    ForestConfig config = forest.config();
    config.seed = derived_seed(seed, k);
    try {
      out.push_back(fit_forest(data.with_responses(exact_responses(y)), forest.spec(), config));
    } catch (const Error& e) {
      throw Error("bootstrap replication " + std::to_string(k + 1) + ": " + e.what());
    }
  }
  return out;
}

double bootstrap_p_value(double observed, const std::vector<double>& null_stats) {
  if (null_stats.empty()) throw std::invalid_argument("no bootstrap statistics");
  const auto above = std::count_if(null_stats.begin(), null_stats.end(),
                                   [&](double v) { return v > observed; });
  return static_cast<double>(above) / static_cast<double>(null_stats.size());
}

namespace {

double log_lr(const Dataset& data, const ModelSpec& spec, const ForestConfig& config) {
  const std::vector<double> ones(data.size(), 1.0);
  const double ll0 = fit_mle(spec, data.responses(), ones, config.optimizer).log_likelihood;
  const auto forest = fit_forest(data, spec, config);
  return forest_log_likelihood(forest, data, WeightMode::InBag) - ll0;
}

}  // namespace

LrTestResult independence_lr_test(const Dataset& data, const ModelSpec& spec,
                                  const ForestConfig& config, std::size_t K, std::uint64_t seed) {
  if (K < 19) throw std::invalid_argument("LR test needs K >= 19");
  LrTestResult out;
  ForestConfig cfg = config;
  cfg.seed = derived_seed(seed, 0);
  out.log_lr = log_lr(data, spec, cfg);

  const std::vector<double> ones(data.size(), 1.0);
  const auto null_model = fit_mle(spec, data.responses(), ones, config.optimizer).model;
  out.null_log_lr.reserve(K);
  for (std::size_t k = 1; k <= K; ++k) {
    auto rng = derived_rng(seed, k);
    std::vector<double> y(data.size());
    for (auto& v : y) v = null_model.quantile(open_uniform(rng));
    cfg.seed = derived_seed(seed, k);
    try {
      out.null_log_lr.push_back(log_lr(data.with_responses(exact_responses(y)), spec, cfg));
    } catch (const Error& e) {
      throw Error("LR bootstrap replication " + std::to_string(k) + ": " + e.what());
    }
  }
  out.p_value = bootstrap_p_value(out.log_lr, out.null_log_lr);
  return out;
}

}  // namespace trafo
