#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "cli.hpp"
#include "trafo/io.hpp"
#include "trafo/simbench.hpp"

using namespace trafo;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("trafo_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(path(name)) << text;
    return path(name);
  }

  static std::string slurp(const std::string& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  // "key: value" lines of a command summary.
  static std::map<std::string, std::string> fields(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      const auto colon = line.find(": ");
      if (colon != std::string::npos) out[line.substr(0, colon)] = line.substr(colon + 2);
    }
    return out;
  }

  static std::vector<std::vector<std::string>> csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      std::vector<std::string> row;
      std::istringstream ls(line);
      std::string field;
      while (std::getline(ls, field, ',')) row.push_back(field);
      rows.push_back(row);
    }
    return rows;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, FitThreeRowsMatchesLibrary) {
  const auto data = write("d.csv", "x,y\n1,-1\n2,0\n3,1\n");
  const auto r = run({"fit", "--data", data, "--mode", "tree", "--alpha", "1e-9", "--order", "1", "--support",
                      "-1,1", "--out", path("m.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto f = fields(r.out);
  EXPECT_EQ(f.at("N"), "3");
  EXPECT_EQ(f.at("J"), "1");
  EXPECT_EQ(f.at("leaves"), "1");
  EXPECT_EQ(f.at("seed"), "42");
  const std::vector<Response> resp = {Response::exact(-1), Response::exact(0), Response::exact(1)};
  const ModelSpec spec{BernsteinBasis(1, SupportInterval(-1, 1)), BaseDistribution::StandardNormal};
  const auto fit = fit_mle(spec, resp, std::vector<double>(3, 1.0));
  EXPECT_NEAR(std::stod(f.at("log_likelihood")), fit.log_likelihood, 1e-9);
  // Closed form: sigma^2 = 2/3, so the slope of h is 1 / sqrt(2/3).
  const auto doc = parse_model(slurp(path("m.json")));
  const auto& theta = doc.forest.trees().front().root().theta;
  EXPECT_NEAR((theta[1] - theta[0]) / 2.0, 1.22474, 1e-3);
  EXPECT_EQ(doc.kind, ModelKind::Tree);
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  const auto no_y = write("d.csv", "x1,x2\n1,2\n3,4\n");
  EXPECT_EQ(run({"fit", "--data", no_y, "--out", path("m.json")}).code, 2);
  EXPECT_EQ(run({"fit"}).code, 2);
  EXPECT_EQ(run({"nosuchcommand"}).code, 2);
  const auto bad = write("bad.csv", "x,y\n1,oops\n");
  const auto r = run({"fit", "--data", bad, "--out", path("m.json")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
  EXPECT_EQ(run({"predict", "--model", path("absent.json"), "--data", bad}).code, 1);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(CliTest, PredictIntervalAndMedian) {
  std::ostringstream text;
  text << "x,y\n";
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z(2.0, 1.5);
  std::vector<double> ys;
  for (int i = 0; i < 200; ++i) {
    ys.push_back(z(rng));
    text << i % 5 << ',' << format_double(ys.back()) << '\n';
  }
  const auto data = write("d.csv", text.str());
  ASSERT_EQ(run({"fit", data, "--mode", "tree", "--order", "1", "--alpha", "1e-9", "--out", path("m.json")}).code, 0);
  const auto query = write("q.csv", "x\n0\n3\n");
  const auto r = run({"predict", "--model", path("m.json"), "--data", query, "--quantiles", "0.5", "--interval", "0.1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = csv(r.out);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"row", "q_0.5", "pi_lower", "pi_upper"}));

  double mean = 0.0, var = 0.0;
  for (double y : ys) mean += y / ys.size();
  for (double y : ys) var += (y - mean) * (y - mean) / ys.size();
  const double sd = std::sqrt(var);
  auto sorted = ys;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[99];
  EXPECT_NEAR(std::stod(rows[1][1]), median, 0.1 * sd);
  EXPECT_NEAR(std::stod(rows[1][2]), mean - 1.64485 * sd, 1e-2);
  EXPECT_NEAR(std::stod(rows[1][3]), mean + 1.64485 * sd, 1e-2);
  EXPECT_EQ(rows[1][1], rows[2][1]);
}

TEST_F(CliTest, PredictSchemaMismatch) {
  const auto data = write("d.csv", "a,b,y\n1,2,0.5\n2,3,1.5\n3,1,0.1\n4,0,2.0\n");
  ASSERT_EQ(run({"fit", data, "--mode", "tree", "--order", "1", "--out", path("m.json")}).code, 0);
  const auto query = write("q.csv", "a,c\n1,2\n");
  const auto r = run({"predict", "--model", path("m.json"), "--data", query});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("'b'"), std::string::npos) << r.err;
  EXPECT_EQ(run({"predict", "--model", path("m.json"), "--data", data, "--quantiles", "1.5"}).code, 2);
}

TEST_F(CliTest, SimulateFitPredictRoundTrip) {
  const auto sim = run({"simulate", "--dgp", "tree", "--effect", "H2c", "--n", "250", "--seed", "3", "--out",
                        path("sim.csv")});
  ASSERT_EQ(sim.code, 0) << sim.err;
  const auto text = slurp(path("sim.csv"));
  EXPECT_EQ(text.substr(0, text.find('\n')), "x1,x2,x3,x4,x5,x6,x7,y");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 251);
  ASSERT_EQ(run({"simulate", "--effect", "variance", "--n", "250", "--seed", "3", "--out", path("sim2.csv")}).code, 0);
  EXPECT_EQ(slurp(path("sim2.csv")), text);

  const auto fit = run({"fit", path("sim.csv"), "--mode", "forest", "--order", "1", "--trees", "10", "--seed", "5", "--out",
                        path("f.json")});
  ASSERT_EQ(fit.code, 0) << fit.err;
  EXPECT_EQ(fields(fit.out).at("trees"), "10");
  const auto p1 = run({"predict", "-m", path("f.json"), "--data", path("sim.csv"), "--quantiles", "0.1,0.9",
                       "--density-at", "0"});
  ASSERT_EQ(p1.code, 0) << p1.err;

  // Library prediction from the in-memory forest agrees with the CLI bit for bit.
  std::ifstream in(path("sim.csv"));
  const auto data = read_dataset(in);
  ForestConfig cfg;
  cfg.n_trees = 10;
  cfg.seed = 5;
  const ModelSpec spec{BernsteinBasis(1, default_support(data.responses())), BaseDistribution::StandardNormal};
  const auto forest = fit_forest(data, spec, cfg);
  const auto rows = csv(p1.out);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"row", "q_0.1", "q_0.9", "logdens_0", "loglik"}));
  for (std::size_t i : {0u, 7u, 249u}) {
    const auto model = predict_params(forest, data.row(i), WeightMode::InBag);
    EXPECT_EQ(rows[i + 1][1], format_double(model.quantile(0.1)));
    EXPECT_EQ(rows[i + 1][2], format_double(model.quantile(0.9)));
    EXPECT_EQ(rows[i + 1][3], format_double(model.log_density(0.0)));
    EXPECT_EQ(rows[i + 1][4], format_double(log_likelihood(model, data.response(i))));
  }
  const auto p2 = run({"predict", "-m", path("f.json"), "--data", path("sim.csv"), "--quantiles", "0.1,0.9",
                       "--density-at", "0"});
  EXPECT_EQ(p1.out, p2.out);
  const auto oob = run({"predict", "-m", path("f.json"), "--data", path("sim.csv"), "--oob"});
  EXPECT_EQ(oob.code, 0) << oob.err;
}

TEST_F(CliTest, ImportanceIdentityIsZero) {
  ASSERT_EQ(run({"simulate", "--n", "120", "--out", path("sim.csv")}).code, 0);
  ASSERT_EQ(run({"fit", path("sim.csv"), "--mode", "forest", "--order", "1", "--trees", "5", "--out", path("f.json")}).code, 0);
  const auto r = run({"importance", "-m", path("f.json"), "--identity-permutation"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = csv(r.out);
  ASSERT_EQ(rows.size(), 8u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"variable", "importance"}));
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(rows[i][1], "0");
}

TEST_F(CliTest, BootstrapWritesReplications) {
  ASSERT_EQ(run({"simulate", "--n", "100", "--out", path("sim.csv")}).code, 0);
  ASSERT_EQ(run({"fit", path("sim.csv"), "--mode", "forest", "--order", "1", "--trees", "3", "--out", path("f.json")}).code, 0);
  const auto r = run({"bootstrap", "-m", path("f.json"), "--K", "2", "--out-prefix", path("boot_")});
  ASSERT_EQ(r.code, 0) << r.err;
  for (int k = 1; k <= 2; ++k) {
    const auto doc = parse_model(slurp(path("boot_" + std::to_string(k) + ".json")));
    EXPECT_EQ(doc.forest.trees().size(), 3u);
  }
  EXPECT_FALSE(fs::exists(path("boot_3.json")));
}

TEST_F(CliTest, LrTestOnNullDataRarelyRejects) {
  int accept = 0;
  for (int rep = 0; rep < 10; ++rep) {
    const auto seed = std::to_string(100 + rep);
    ASSERT_EQ(run({"simulate", "--effect", "none", "--n", "100", "--seed", seed, "--out", path("sim.csv")}).code, 0);
    const auto r = run({"lrtest", path("sim.csv"), "--order", "1", "--trees", "30", "--K", "19", "--seed", seed});
    ASSERT_EQ(r.code, 0) << r.err;
    if (std::stod(fields(r.out).at("p_value")) > 0.05) ++accept;
  }
  EXPECT_GE(accept, 8);
}

TEST_F(CliTest, BenchmarkSmokeAndDeterminism) {
  const std::vector<std::string> args = {"benchmark", "--effect", "variance", "--n", "80", "--n-test", "40",
                                         "--reps", "2", "--methods", "ttree1,mseforest1", "--trees", "5",
                                         "--no-timing"};
  auto a = args, b = args;
  a.insert(a.end(), {"--out", path("a.csv"), "--summary", path("s.csv")});
  b.insert(b.end(), {"--out", path("b.csv")});
  ASSERT_EQ(run(a).code, 0);
  ASSERT_EQ(run(b).code, 0);
  EXPECT_EQ(slurp(path("a.csv")), slurp(path("b.csv")));
  const auto rows = csv(slurp(path("a.csv")));
  ASSERT_EQ(rows.size(), 5u);
  for (std::size_t i = 1; i < rows.size(); ++i)
    for (std::size_t c = 5; c <= 8; ++c) EXPECT_TRUE(std::isfinite(std::stod(rows[i][c]))) << rows[i][c];
  EXPECT_TRUE(fs::exists(path("s.csv")));

  const auto bad = run({"benchmark", "--methods", "ttree1,forest9"});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("tforest5"), std::string::npos) << bad.err;
}

TEST_F(CliTest, OutOfBagRowsWithoutWeightAreNA) {
  const auto data = write("d.csv", "x,y\n1,0.1\n2,0.5\n3,0.2\n4,0.9\n5,0.4\n6,0.3\n");
  ASSERT_EQ(run({"fit", data, "--mode", "forest", "--order", "1", "--trees", "1", "--subsample", "1", "--out",
                 path("f.json")})
                .code,
            0);
  const auto r = run({"predict", "-m", path("f.json"), "--data", data, "--oob", "--quantiles", "0.5"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = csv(r.out);
  ASSERT_EQ(rows.size(), 7u);
  EXPECT_EQ(rows[1], (std::vector<std::string>{"1", "NA", "NA"}));
}
