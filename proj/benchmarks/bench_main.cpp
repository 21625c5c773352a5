#include <numeric>
#include <vector>

#include <benchmark/benchmark.h>

#include "trafo/forest.hpp"
#include "trafo/simbench.hpp"

namespace {

trafo::Simulated friedman_sample(std::size_t n) {
  trafo::DgpSpec spec;
  spec.family = trafo::DgpFamily::FriedmanNormal;
  spec.effect = trafo::Effect::MeanAndVariance;
  trafo::Rng rng(1);
  return trafo::generate(spec, n, rng);
}

trafo::ModelSpec model_spec(const trafo::Dataset& data, int order) {
  return {trafo::BernsteinBasis(order, trafo::default_support(data.responses())),
          trafo::BaseDistribution::StandardNormal};
}

void BM_FitMle(benchmark::State& state) {
  const auto sim = friedman_sample(static_cast<std::size_t>(state.range(0)));
  const auto spec = model_spec(sim.data, 5);
  const std::vector<double> w(sim.data.size(), 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(trafo::fit_mle(spec, sim.data.responses(), w));
}
BENCHMARK(BM_FitMle)->Arg(250)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

void BM_SplitMaxStat(benchmark::State& state) {
  const auto sim = friedman_sample(static_cast<std::size_t>(state.range(0)));
  const auto spec = model_spec(sim.data, 5);
  std::vector<std::size_t> rows(sim.data.size());
  std::iota(rows.begin(), rows.end(), 0);
  const auto fit = trafo::fit_mle(spec, sim.data.responses(), std::vector<double>(rows.size(), 1.0));
  const auto scores = trafo::score_matrix(fit.model, sim.data.responses(), rows);
  for (auto _ : state)
    benchmark::DoNotOptimize(trafo::split_maxstat(sim.data, rows, scores, 0, trafo::TreeConfig{}));
}
BENCHMARK(BM_SplitMaxStat)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

void BM_SplitExhaustive(benchmark::State& state) {
  const auto sim = friedman_sample(static_cast<std::size_t>(state.range(0)));
  const auto spec = model_spec(sim.data, 1);
  std::vector<std::size_t> rows(sim.data.size());
  std::iota(rows.begin(), rows.end(), 0);
  for (auto _ : state)
    benchmark::DoNotOptimize(trafo::split_exhaustive_loglik(sim.data, rows, 0, spec, trafo::TreeConfig{}));
}
BENCHMARK(BM_SplitExhaustive)->Arg(250)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_FitForest(benchmark::State& state) {
  const auto sim = friedman_sample(500);
  const auto spec = model_spec(sim.data, 5);
  trafo::ForestConfig cfg;
  cfg.n_trees = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(trafo::fit_forest(sim.data, spec, cfg));
}
BENCHMARK(BM_FitForest)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_PredictParams(benchmark::State& state) {
  const auto sim = friedman_sample(500);
  const auto spec = model_spec(sim.data, 5);
  trafo::ForestConfig cfg;
  cfg.n_trees = 50;
  const auto forest = trafo::fit_forest(sim.data, spec, cfg);
  const Eigen::VectorXd x = sim.data.row(0);
  for (auto _ : state) benchmark::DoNotOptimize(trafo::predict_params(forest, x, trafo::WeightMode::InBag));
}
BENCHMARK(BM_PredictParams)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
