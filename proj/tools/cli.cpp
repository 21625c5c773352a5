#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <ostream>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>

#include "trafo/errors.hpp"
#include "trafo/inference.hpp"
#include "trafo/io.hpp"
#include "trafo/simbench.hpp"

namespace trafo::cli {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FitFlags {
  std::string data;
  std::string out = "model.json";
  int order = 5;
  std::string dist = "normal";
  std::string mode = "tree";
  std::size_t trees = 100;
  double alpha = 0.05;
  std::size_t mtry = 0;  // 0: default
  std::uint64_t seed = 42;
  std::string support;
  std::size_t minsplit = 25;
  std::size_t minbucket = 0;  // 0: default
  int max_depth = -1;
  std::string split = "maxstat";
  std::string test_stat = "quadratic";
  double subsample = 0.632;
  unsigned threads = 1;
  std::vector<std::string> categorical;
  std::vector<std::string> ordinal;
  char delimiter = ',';
};

void add_model_flags(CLI::App* cmd, FitFlags& f, bool with_mode) {
  cmd->add_option("--data,data", f.data, "Input table (CSV with header)")->required();
  cmd->add_option("--order", f.order, "Bernstein polynomial order M")->check(CLI::PositiveNumber);
  cmd->add_option("--dist", f.dist, "Base distribution")->check(CLI::IsMember({"normal", "logistic", "minextreme"}));
  if (with_mode) cmd->add_option("--mode", f.mode, "Fit a single tree or a forest")->check(CLI::IsMember({"tree", "forest"}));
  cmd->add_option("--trees", f.trees, "Number of trees in a forest")->check(CLI::PositiveNumber);
  cmd->add_option("--alpha", f.alpha, "Significance level for variable selection");
  cmd->add_option("--mtry", f.mtry, "Candidate predictors per node");
  cmd->add_option("--seed", f.seed, "Random seed");
  cmd->add_option("--support", f.support, "Bernstein support as LO,HI");
  cmd->add_option("--minsplit", f.minsplit, "Minimum node size to attempt a split");
  cmd->add_option("--minbucket", f.minbucket, "Minimum leaf size");
  cmd->add_option("--max-depth", f.max_depth, "Maximum tree depth");
  cmd->add_option("--split", f.split, "Split search")->check(CLI::IsMember({"maxstat", "loglik", "mse"}));
  cmd->add_option("--test-stat", f.test_stat, "Test statistic")->check(CLI::IsMember({"quadratic", "maxabs"}));
  cmd->add_option("--subsample", f.subsample, "Forest subsample fraction");
  cmd->add_option("--threads", f.threads, "Worker threads for forest growth");
  cmd->add_option("--categorical", f.categorical, "Categorical predictor columns")->delimiter(',');
  cmd->add_option("--ordinal", f.ordinal, "Ordinal predictor columns")->delimiter(',');
  cmd->add_option("--delimiter", f.delimiter, "Field delimiter");
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  return out;
}

std::string read_file(const std::string& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Dataset load_dataset(const FitFlags& f) {
  auto in = open_in(f.data);
  return read_dataset(in, {f.delimiter, f.categorical, f.ordinal});
}

ModelSpec make_spec(const FitFlags& f, const Dataset& data) {
  const auto dist = parse_distribution(f.dist);
  if (!dist) throw UsageError("unknown distribution '" + f.dist + "'");
  std::optional<SupportInterval> support;
  if (!f.support.empty()) {
    const auto comma = f.support.find(',');
    if (comma == std::string::npos) throw UsageError("--support expects LO,HI");
    try {
      support = SupportInterval(std::stod(f.support.substr(0, comma)), std::stod(f.support.substr(comma + 1)));
    } catch (const std::logic_error&) {
      throw UsageError("--support expects two finite numbers LO,HI with LO < HI");
    }
  } else {
    support = default_support(data.responses());
  }
  return {BernsteinBasis(f.order, *support), *dist};
}

ForestConfig make_config(const FitFlags& f, const Dataset& data, bool tree_mode) {
  ForestConfig cfg;
  cfg.seed = f.seed;
  cfg.threads = f.threads;
  cfg.tree.alpha = f.alpha;
  cfg.tree.minsplit = f.minsplit;
  if (f.minbucket > 0) cfg.tree.minbucket = f.minbucket;
  if (f.max_depth >= 0) cfg.tree.max_depth = f.max_depth;
  cfg.tree.test_stat = f.test_stat == "maxabs" ? TestStatistic::MaxAbs : TestStatistic::Quadratic;
  if (f.split == "loglik") cfg.tree.split_mode = SplitMode::ExhaustiveLikelihood;
  if (f.split == "mse") cfg.kind = TreeKind::MSE;
  if (tree_mode) {
    cfg.n_trees = 1;
    cfg.subsample_fraction = 1.0;
    cfg.tree.stop_on_alpha = true;
    cfg.mtry = f.mtry > 0 ? f.mtry : data.n_predictors();
  } else {
    cfg.n_trees = f.trees;
    cfg.subsample_fraction = f.subsample;
    if (f.mtry > 0) cfg.mtry = f.mtry;
  }
  return cfg;
}

// In-bag log-likelihood of the training sample.
double training_log_likelihood(const ModelDocument& doc) {
  const auto& forest = doc.forest;
  if (doc.kind == ModelKind::Forest) return forest_log_likelihood(forest, forest.data(), WeightMode::InBag);
  double total = 0.0;
  const auto& data = forest.data();
  for (std::size_t i = 0; i < data.size(); ++i)
    total += log_likelihood(forest.trees().front().model_at(data.row(i)), data.response(i));
  return total;
}

int cmd_fit(const FitFlags& f, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = load_dataset(f);
  const auto spec = make_spec(f, data);
  const bool tree_mode = f.mode == "tree";
  const auto cfg = make_config(f, data, tree_mode);
  ModelDocument doc{tree_mode ? ModelKind::Tree : ModelKind::Forest, fit_forest(data, spec, cfg)};
  const double ll = training_log_likelihood(doc);
  {
    auto file = open_out(f.out);
    file << serialize_model(doc);
  }
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  std::size_t leaves = 0;
  for (const auto& t : doc.forest.trees()) leaves += t.n_leaves();
  out << "seed: " << f.seed << '\n'
      << "N: " << data.size() << '\n'
      << "J: " << data.n_predictors() << '\n'
      << "trees: " << doc.forest.trees().size() << '\n'
      << "leaves: " << leaves << '\n'
      << "log_likelihood: " << format_double(ll) << '\n'
      << "wall_ms: " << format_double(ms) << '\n'
      << "model: " << f.out << '\n';
  return 0;
}

struct PredictFlags {
  std::string model;
  std::string data;
  std::string out;
  std::vector<double> quantiles;
  double interval = 0.0;
  std::vector<double> density_at;
  bool oob = false;
  char delimiter = ',';
};

int cmd_predict(const PredictFlags& f, std::ostream& out) {
  const auto doc = parse_model(read_file(f.model));
  const auto& forest = doc.forest;
  auto in = open_in(f.data);
  const auto table = read_prediction_table(in, forest.data().columns(), f.delimiter);
  for (double p : f.quantiles)
    if (!(p > 0.0 && p < 1.0)) throw UsageError("--quantiles values must lie in (0, 1)");
  if (f.interval != 0.0 && !(f.interval > 0.0 && f.interval < 1.0)) throw UsageError("--interval must lie in (0, 1)");
  if (f.oob) {
    if (doc.kind == ModelKind::Tree) throw UsageError("--oob needs a forest model");
    if (static_cast<std::size_t>(table.x.rows()) != forest.data().size())
      throw UsageError("--oob needs the training rows in their original order");
  }

  std::ofstream file;
  std::ostream* os = &out;
  if (!f.out.empty()) {
    file = open_out(f.out);
    os = &file;
  }
  const char d = f.delimiter;
  *os << "row";
  for (double p : f.quantiles) *os << d << "q_" << format_double(p);
  if (f.interval > 0.0) *os << d << "pi_lower" << d << "pi_upper";
  for (double v : f.density_at) *os << d << "logdens_" << format_double(v);
  if (table.responses) *os << d << "loglik";
  *os << '\n';

  for (Eigen::Index i = 0; i < table.x.rows(); ++i) {
    const Eigen::VectorXd x = table.x.row(i).transpose();
    const auto row = static_cast<std::size_t>(i);
    std::optional<TransformationModel> fitted;
    try {
      fitted = doc.kind == ModelKind::Tree
                   ? forest.trees().front().model_at(x)
                   : predict_params(forest, x, f.oob ? WeightMode::OutOfBag : WeightMode::InBag,
                                    f.oob ? std::optional<std::size_t>(row) : std::nullopt);
    } catch (const UnpredictablePointError&) {
      // Only reachable with --oob: the row was in bag for every tree.
      *os << i + 1;
      const std::size_t n_fields = f.quantiles.size() + (f.interval > 0.0 ? 2 : 0) + f.density_at.size() +
                                   (table.responses ? 1 : 0);
      for (std::size_t k = 0; k < n_fields; ++k) *os << d << "NA";
      *os << '\n';
      continue;
    }
    const auto& model = *fitted;
    *os << i + 1;
    for (double p : f.quantiles) *os << d << format_double(model.quantile(p));
    if (f.interval > 0.0) {
      const auto pi = prediction_interval(model, f.interval);
      *os << d << format_double(pi.lower) << d << format_double(pi.upper);
    }
    for (double v : f.density_at) *os << d << format_double(model.log_density(v));
    if (table.responses) {
      double ll;
      try {
        ll = log_likelihood(model, (*table.responses)[row]);
      } catch (const DegenerateLikelihoodError&) {
        ll = -std::numeric_limits<double>::infinity();
      }
      *os << d << format_double(ll);
    }
    *os << '\n';
  }
  return 0;
}

int cmd_importance(const std::string& model_path, std::uint64_t seed, bool all_rows, bool identity,
                   std::ostream& out) {
  const auto doc = parse_model(read_file(model_path));
  const auto report = variable_importance(doc.forest, seed, {!all_rows, identity});
  out << "variable,importance\n";
  const auto& cols = doc.forest.data().columns();
  for (std::size_t j = 0; j < cols.size(); ++j) out << cols[j].name << ',' << format_double(report.importance[j]) << '\n';
  return 0;
}

int cmd_lrtest(const FitFlags& f, std::size_t K, std::ostream& out) {
  const auto data = load_dataset(f);
  const auto spec = make_spec(f, data);
  const auto cfg = make_config(f, data, false);
  const auto res = independence_lr_test(data, spec, cfg, K, f.seed);
  out << "seed: " << f.seed << '\n'
      << "K: " << K << '\n'
      << "log_lr: " << format_double(res.log_lr) << '\n'
      << "p_value: " << format_double(res.p_value) << '\n';
  return 0;
}

int cmd_bootstrap(const std::string& model_path, std::size_t K, std::uint64_t seed,
                  const std::string& prefix, std::ostream& out) {
  const auto doc = parse_model(read_file(model_path));
  const auto forests = model_based_bootstrap(doc.forest, K, seed);
  out << "seed: " << seed << '\n';
  for (std::size_t k = 0; k < forests.size(); ++k) {
    const std::string path = prefix + std::to_string(k + 1) + ".json";
    auto file = open_out(path);
    file << serialize_model({doc.kind, forests[k]});
    out << "replication " << k + 1 << ": " << path << '\n';
  }
  return 0;
}

struct SimFlags {
  std::vector<std::string> dgp{"tree"};
  std::vector<std::string> effect{"variance"};
  std::string dim = "low";
  std::size_t n = 0;  // 0: family default
  std::size_t n_test = 250;
  std::uint64_t seed = 42;
  std::string out;
};

std::vector<DgpSpec> make_specs(const SimFlags& f) {
  const auto dim = parse_dim(f.dim);
  if (!dim) throw UsageError("unknown --dim '" + f.dim + "' (use low or high)");
  std::vector<DgpSpec> specs;
  for (const auto& g : f.dgp) {
    const auto fam = parse_family(g);
    if (!fam) throw UsageError("unknown --dgp '" + g + "' (use tree, treelognormal, friedman, friedmanlognormal)");
    for (const auto& e : f.effect) {
      const auto eff = parse_effect(e);
      if (!eff) throw UsageError("unknown --effect '" + e + "' (use none, mean, variance, meanvariance)");
      DgpSpec s;
      s.family = *fam;
      s.effect = *eff;
      s.dim = *dim;
      s.n_learn = f.n > 0 ? f.n : DgpSpec::default_n_learn(*fam);
      s.n_test = f.n_test;
      s.seed = f.seed;
      specs.push_back(s);
    }
  }
  return specs;
}

int cmd_simulate(const SimFlags& f, std::ostream& out) {
  if (f.dgp.size() != 1 || f.effect.size() != 1) throw UsageError("simulate takes one --dgp and one --effect");
  const auto spec = make_specs(f).front();
  auto rng = derived_rng(f.seed, 0);
  const auto sim = generate(spec, spec.n_learn, rng);
  if (f.out.empty()) {
    write_dataset(out, sim.data);
  } else {
    auto file = open_out(f.out);
    write_dataset(file, sim.data);
  }
  return 0;
}

int cmd_benchmark(const SimFlags& f, std::size_t reps, const std::vector<std::string>& methods,
                  std::size_t trees, bool no_timing, unsigned threads, const std::string& summary,
                  std::ostream& out, std::ostream& err) {
  const auto& known = benchmark_methods();
  for (const auto& m : methods) {
    if (std::find(known.begin(), known.end(), m) == known.end()) {
      std::string list;
      for (const auto& k : known) list += (list.empty() ? "" : ", ") + k;
      throw UsageError("unknown method '" + m + "'; available methods: " + list);
    }
  }
  BenchmarkOptions opt;
  opt.specs = make_specs(f);
  opt.methods = methods.empty() ? known : methods;
  opt.reps = reps;
  opt.seed = f.seed;
  opt.n_trees = trees;
  opt.timing = !no_timing;
  opt.threads = threads;
  const auto records = run_benchmark(opt);
  if (f.out.empty()) {
    write_benchmark_table(out, records);
  } else {
    auto file = open_out(f.out);
    write_benchmark_table(file, records);
  }
  if (!summary.empty()) {
    auto file = open_out(summary);
    write_benchmark_summary(file, records);
  }
  for (const auto& r : records)
    if (!r.error.empty())
      err << "warning: " << r.dgp << '/' << r.effect << '/' << r.method << " rep " << r.rep << ": " << r.error
                << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transformation trees and forests for conditional distributions", "trafo"};
  app.require_subcommand(1);

  FitFlags fit_flags;
  auto* fit = app.add_subcommand("fit", "Fit a transformation tree or forest");
  add_model_flags(fit, fit_flags, true);
  fit->add_option("--out,-o", fit_flags.out, "Model document to write");

  PredictFlags pred;
  auto* predict = app.add_subcommand("predict", "Predict conditional distributions for new data");
  predict->add_option("--model,-m", pred.model, "Model document")->required();
  predict->add_option("--data,data", pred.data, "New data table")->required();
  predict->add_option("--quantiles", pred.quantiles, "Probabilities of requested quantiles")->delimiter(',');
  predict->add_option("--interval", pred.interval, "Prediction interval level alpha");
  predict->add_option("--density-at", pred.density_at, "Evaluate the log-density at these values")->delimiter(',');
  predict->add_flag("--oob", pred.oob, "Out-of-bag predictions for the training rows");
  predict->add_option("--out,-o", pred.out, "Output file (default: standard output)");
  predict->add_option("--delimiter", pred.delimiter, "Field delimiter");

  std::string model_path;
  std::uint64_t seed = 42;
  bool all_rows = false, identity = false;
  auto* importance = app.add_subcommand("importance", "Permutation variable importance");
  importance->add_option("--model,-m", model_path, "Forest model document")->required();
  importance->add_option("--seed", seed, "Random seed");
  importance->add_flag("--all-rows", all_rows, "Evaluate on all rows instead of out-of-bag rows");
  importance->add_flag("--identity-permutation", identity, "Test hook: do not permute");

  FitFlags lr_flags;
  lr_flags.mode = "forest";
  std::size_t lr_K = 99;
  auto* lrtest = app.add_subcommand("lrtest", "Bootstrap likelihood-ratio test of independence");
  add_model_flags(lrtest, lr_flags, false);
  lrtest->add_option("--K", lr_K, "Bootstrap replications")->check(CLI::PositiveNumber);

  std::size_t boot_K = 1;
  std::string prefix = "bootstrap_";
  auto* bootstrap = app.add_subcommand("bootstrap", "Model-based bootstrap refits");
  bootstrap->add_option("--model,-m", model_path, "Model document")->required();
  bootstrap->add_option("--K", boot_K, "Replications")->check(CLI::PositiveNumber);
  bootstrap->add_option("--seed", seed, "Random seed");
  bootstrap->add_option("--out-prefix", prefix, "Output path prefix; files are <prefix><k>.json");

  SimFlags sim;
  auto* simulate = app.add_subcommand("simulate", "Draw a learning sample from a simulation design");
  simulate->add_option("--dgp", sim.dgp, "tree, treelognormal, friedman or friedmanlognormal")->delimiter(',');
  simulate->add_option("--effect", sim.effect, "none, mean, variance or meanvariance (or H2a, H2b, H2c, H2c+)")->delimiter(',');
  simulate->add_option("--dim", sim.dim, "low or high");
  simulate->add_option("--n", sim.n, "Sample size (default: the design's size)");
  simulate->add_option("--seed", sim.seed, "Random seed");
  simulate->add_option("--out,-o", sim.out, "Output file (default: standard output)");

  SimFlags bench;
  std::size_t reps = 2, trees = 100;
  std::vector<std::string> methods;
  bool no_timing = false;
  unsigned threads = 1;
  std::string summary;
  auto* benchmark = app.add_subcommand("benchmark", "Run the simulation benchmark");
  benchmark->add_option("--dgp", bench.dgp, "Designs (comma separated)")->delimiter(',');
  benchmark->add_option("--effect", bench.effect, "Effects (comma separated)")->delimiter(',');
  benchmark->add_option("--dim", bench.dim, "low or high");
  benchmark->add_option("--n", bench.n, "Learning sample size (default: the design's size)");
  benchmark->add_option("--n-test", bench.n_test, "Test sample size");
  benchmark->add_option("--reps", reps, "Replications")->check(CLI::PositiveNumber);
  benchmark->add_option("--methods", methods, "Methods (comma separated; default all)")->delimiter(',');
  benchmark->add_option("--trees", trees, "Trees per forest")->check(CLI::PositiveNumber);
  benchmark->add_option("--seed", bench.seed, "Random seed");
  benchmark->add_flag("--no-timing", no_timing, "Write NA for timings so tables are reproducible");
  benchmark->add_option("--threads", threads, "Worker threads for forest growth");
  benchmark->add_option("--out,-o", bench.out, "Output table (default: standard output)");
  benchmark->add_option("--summary", summary, "Also write per-method medians to this file");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    if (const auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front())
      err << sub->help();
    return 2;
  }

  try {
    if (*fit) return cmd_fit(fit_flags, out);
    if (*predict) return cmd_predict(pred, out);
    if (*importance) return cmd_importance(model_path, seed, all_rows, identity, out);
    if (*lrtest) return cmd_lrtest(lr_flags, lr_K, out);
    if (*bootstrap) return cmd_bootstrap(model_path, boot_K, seed, prefix, out);
    if (*simulate) return cmd_simulate(sim, out);
    if (*benchmark) return cmd_benchmark(bench, reps, methods, trees, no_timing, threads, summary, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const SchemaError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace trafo::cli
