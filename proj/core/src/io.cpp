#include "trafo/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "trafo/errors.hpp"
#include "trafo/simbench.hpp"

namespace trafo {

namespace {

using nlohmann::json;

constexpr double kInf = std::numeric_limits<double>::infinity();

struct RawTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
};

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  s = s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string> split_line(const std::string& line, char delimiter) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, delimiter)) out.push_back(trim(field));
  if (!line.empty() && line.back() == delimiter) out.emplace_back();
  return out;
}

RawTable read_raw(std::istream& in, char delimiter) {
  RawTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split_line(line, delimiter);
    if (t.header.empty()) {
      t.header = std::move(fields);
      std::set<std::string> seen;
      for (const auto& h : t.header) {
        if (h.empty()) throw ParseError("empty column name in header", lineno);
        if (!seen.insert(h).second) throw ParseError("duplicate column '" + h + "'", lineno);
      }
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw ParseError("line " + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                           " fields, found " + std::to_string(fields.size()),
                       lineno);
    }
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(lineno);
  }
  if (t.header.empty()) throw ParseError("input has no header row");
  if (t.rows.empty()) throw ParseError("input has no data rows");
  return t;
}

double parse_number(const std::string& s, std::size_t line, const std::string& column) {
  double v = 0.0;
  const char* begin = s.data();
  if (!s.empty() && s.front() == '+') ++begin;
  const auto res = std::from_chars(begin, s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size() || std::isnan(v)) {
    throw ParseError("line " + std::to_string(line) + ": column '" + column + "': cannot parse '" + s +
                         "' as a number",
                     line);
  }
  return v;
}

double parse_bound(const std::string& s, double empty_value, std::size_t line, const std::string& column) {
  return s.empty() ? empty_value : parse_number(s, line, column);
}

bool is_response_column(const std::string& name) {
  return name == "y" || name == "y_left" || name == "y_right" || name == "t_left" || name == "t_right";
}

std::optional<std::size_t> find_column(const RawTable& t, const std::string& name) {
  const auto it = std::find(t.header.begin(), t.header.end(), name);
  if (it == t.header.end()) return std::nullopt;
  return static_cast<std::size_t>(it - t.header.begin());
}

// Parses the response columns if present; nullopt when the table has none.
std::optional<std::vector<Response>> parse_responses(const RawTable& t) {
  const auto y = find_column(t, "y");
  const auto yl = find_column(t, "y_left");
  const auto yr = find_column(t, "y_right");
  const auto tl = find_column(t, "t_left");
  const auto tr = find_column(t, "t_right");
  if (!y && !yl && !yr) {
    if (tl || tr) throw SchemaError("truncation columns given without a response column");
    return std::nullopt;
  }
  if (y && (yl || yr)) throw SchemaError("use either 'y' or 'y_left'/'y_right', not both");
  if (!y && !(yl && yr)) throw SchemaError("censored responses need both 'y_left' and 'y_right'");

  std::vector<Response> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const auto line = t.line_numbers[r];
    Response resp;
    if (y) {
      resp = Response::exact(parse_number(row[*y], line, "y"));
      if (!std::isfinite(resp.low)) throw ParseError("line " + std::to_string(line) + ": y must be finite", line);
    } else {
      const double lo = parse_bound(row[*yl], -kInf, line, "y_left");
      const double hi = parse_bound(row[*yr], kInf, line, "y_right");
      try {
        if (lo == hi) resp = Response::exact(lo);
        else if (lo == -kInf && hi == kInf)
          throw ParseError("line " + std::to_string(line) + ": both censoring bounds are empty", line);
        else if (lo == -kInf) resp = Response::left_censored(hi);
        else if (hi == kInf) resp = Response::right_censored(lo);
        else resp = Response::interval(lo, hi);
      } catch (const std::invalid_argument& e) {
        throw ParseError("line " + std::to_string(line) + ": " + e.what(), line);
      }
    }
    if (tl || tr) {
      const double a = tl ? parse_bound(row[*tl], -kInf, line, "t_left") : -kInf;
      const double b = tr ? parse_bound(row[*tr], kInf, line, "t_right") : kInf;
      if (a > -kInf || b < kInf) {
        try {
          resp = resp.truncated(a, b);
        } catch (const std::invalid_argument& e) {
          throw ParseError("line " + std::to_string(line) + ": " + e.what(), line);
        }
      }
    }
    out.push_back(resp);
  }
  return out;
}

std::string scale_name(Scale s) {
  switch (s) {
    case Scale::Continuous: return "continuous";
    case Scale::Ordinal: return "ordinal";
    case Scale::Categorical: return "categorical";
  }
  return "continuous";
}

Scale parse_scale(const std::string& s) {
  if (s == "continuous") return Scale::Continuous;
  if (s == "ordinal") return Scale::Ordinal;
  if (s == "categorical") return Scale::Categorical;
  throw ParseError("unknown column scale '" + s + "'");
}

}  // namespace

Dataset read_dataset(std::istream& in, const TableOptions& options) {
  const auto t = read_raw(in, options.delimiter);
  auto responses = parse_responses(t);
  if (!responses) throw SchemaError("missing response column: need 'y' or 'y_left'/'y_right'");

  for (const auto& name : options.categorical)
    if (!find_column(t, name)) throw SchemaError("categorical column '" + name + "' not in input");
  for (const auto& name : options.ordinal)
    if (!find_column(t, name)) throw SchemaError("ordinal column '" + name + "' not in input");

  std::vector<std::size_t> cols;
  std::vector<Column> schema;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    const auto& name = t.header[c];
    if (is_response_column(name)) continue;
    Column col{name, Scale::Continuous, {}};
    if (std::find(options.categorical.begin(), options.categorical.end(), name) != options.categorical.end()) {
      col.scale = Scale::Categorical;
      std::set<std::string> levels;
      for (const auto& row : t.rows) levels.insert(row[c]);
      col.levels.assign(levels.begin(), levels.end());
    } else if (std::find(options.ordinal.begin(), options.ordinal.end(), name) != options.ordinal.end()) {
      col.scale = Scale::Ordinal;
    }
    cols.push_back(c);
    schema.push_back(std::move(col));
  }
  if (cols.empty()) throw SchemaError("input has no predictor columns");

  Eigen::MatrixXd x(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const auto& s = t.rows[r][cols[k]];
      double v;
      if (schema[k].scale == Scale::Categorical) {
        const auto& lv = schema[k].levels;
        v = static_cast<double>(std::lower_bound(lv.begin(), lv.end(), s) - lv.begin());
      } else {
        v = parse_number(s, t.line_numbers[r], schema[k].name);
        if (!std::isfinite(v))
          throw ParseError("line " + std::to_string(t.line_numbers[r]) + ": predictor '" + schema[k].name +
                               "' must be finite",
                           t.line_numbers[r]);
      }
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = v;
    }
  }
  return Dataset(std::move(*responses), std::move(x), std::move(schema));
}

PredictionTable read_prediction_table(std::istream& in, const std::vector<Column>& schema, char delimiter) {
  const auto t = read_raw(in, delimiter);
  PredictionTable out;
  out.responses = parse_responses(t);
  out.x.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(schema.size()));
  for (std::size_t k = 0; k < schema.size(); ++k) {
    const auto c = find_column(t, schema[k].name);
    if (!c) throw SchemaError("column '" + schema[k].name + "' required by the model is missing from the data");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const auto& s = t.rows[r][*c];
      double v;
      if (schema[k].scale == Scale::Categorical) {
        const auto& lv = schema[k].levels;
        const auto it = std::find(lv.begin(), lv.end(), s);
        // Unseen levels get a code no split knows about.
        v = it == lv.end() ? -1.0 : static_cast<double>(it - lv.begin());
      } else {
        v = parse_number(s, t.line_numbers[r], schema[k].name);
      }
      out.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = v;
    }
  }
  return out;
}

void write_dataset(std::ostream& out, const Dataset& data, char d) {
  const auto& cols = data.columns();
  const bool censored = std::any_of(data.responses().begin(), data.responses().end(),
                                    [](const Response& r) { return !r.is_exact(); });
  const bool truncated = std::any_of(data.responses().begin(), data.responses().end(),
                                     [](const Response& r) { return r.is_truncated(); });
  for (const auto& c : cols) out << c.name << d;
  out << (censored ? std::string("y_left") + d + "y_right" : std::string("y"));
  if (truncated) out << d << "t_left" << d << "t_right";
  out << '\n';
  auto bound = [](double v) { return std::isinf(v) ? std::string() : format_double(v); };
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const double v = data.x(i, j);
      if (cols[j].scale == Scale::Categorical) out << cols[j].levels.at(static_cast<std::size_t>(v));
      else out << format_double(v);
      out << d;
    }
    const auto& r = data.response(i);
    if (censored) out << bound(r.low) << d << bound(r.high);
    else out << format_double(r.low);
    if (truncated) out << d << bound(r.trunc_low) << d << bound(r.trunc_high);
    out << '\n';
  }
}

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_from(const json& j, double null_value) {
  return j.is_null() ? null_value : j.get<double>();
}

json optional_json(const std::optional<std::size_t>& v) { return v ? json(*v) : json(nullptr); }

std::string split_mode_name(SplitMode m) {
  switch (m) {
    case SplitMode::ScoreMaxStat: return "score_maxstat";
    case SplitMode::ExhaustiveLikelihood: return "exhaustive_loglik";
    case SplitMode::ExhaustiveMSE: return "exhaustive_mse";
  }
  return "score_maxstat";
}

SplitMode parse_split_mode(const std::string& s) {
  if (s == "score_maxstat") return SplitMode::ScoreMaxStat;
  if (s == "exhaustive_loglik") return SplitMode::ExhaustiveLikelihood;
  if (s == "exhaustive_mse") return SplitMode::ExhaustiveMSE;
  throw ParseError("unknown split mode '" + s + "'");
}

json response_json(const Response& r) {
  if (r.is_exact() && !r.is_truncated()) return r.low;
  json j;
  j["low"] = number_or_null(r.low);
  j["high"] = number_or_null(r.high);
  if (r.is_truncated()) j["truncation"] = {number_or_null(r.trunc_low), number_or_null(r.trunc_high)};
  return j;
}

Response response_from(const json& j) {
  if (j.is_number()) return Response::exact(j.get<double>());
  const double lo = number_from(j.at("low"), -kInf);
  const double hi = number_from(j.at("high"), kInf);
  Response r;
  if (lo == hi) r = Response::exact(lo);
  else if (lo == -kInf) r = Response::left_censored(hi);
  else if (hi == kInf) r = Response::right_censored(lo);
  else r = Response::interval(lo, hi);
  if (j.contains("truncation")) {
    const auto& t = j.at("truncation");
    r = r.truncated(number_from(t.at(0), -kInf), number_from(t.at(1), kInf));
  }
  return r;
}

json theta_json(const Eigen::VectorXd& theta) {
  return std::vector<double>(theta.data(), theta.data() + theta.size());
}

json node_json(const Tree& tree, int id, const std::vector<Column>& schema) {
  const auto& node = tree.node(id);
  json j;
  j["id"] = node.id;
  j["depth"] = node.depth;
  j["n"] = node.n;
  j["theta"] = theta_json(node.theta);
  if (node.is_leaf()) {
    j["leaf"] = {{"members", node.members}};
    return j;
  }
  const auto& s = *node.split;
  json split;
  split["var"] = s.variable;
  split["var_name"] = schema[s.variable].name;
  split["criterion"] = number_or_null(s.criterion);
  if (s.categorical) {
    split["left_levels"] = s.left_levels;
    split["right_levels"] = s.right_levels;
  } else {
    split["cutpoint"] = s.cutpoint;
  }
  j["split"] = std::move(split);
  j["left"] = node_json(tree, node.left, schema);
  j["right"] = node_json(tree, node.right, schema);
  return j;
}

void nodes_from(const json& j, std::vector<std::optional<TreeNode>>& nodes) {
  TreeNode node;
  node.id = j.at("id").get<int>();
  node.depth = j.at("depth").get<int>();
  node.n = j.at("n").get<std::size_t>();
  const auto theta = j.at("theta").get<std::vector<double>>();
  node.theta = Eigen::Map<const Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size()));
  if (j.contains("leaf")) {
    node.members = j.at("leaf").at("members").get<std::vector<std::size_t>>();
  } else {
    const auto& s = j.at("split");
    SplitRecord rec;
    rec.variable = s.at("var").get<std::size_t>();
    rec.criterion = number_from(s.at("criterion"), std::numeric_limits<double>::quiet_NaN());
    if (s.contains("cutpoint")) {
      rec.cutpoint = s.at("cutpoint").get<double>();
    } else {
      rec.categorical = true;
      rec.left_levels = s.at("left_levels").get<std::vector<int>>();
      rec.right_levels = s.at("right_levels").get<std::vector<int>>();
    }
    node.split = rec;
    node.left = j.at("left").at("id").get<int>();
    node.right = j.at("right").at("id").get<int>();
    nodes_from(j.at("left"), nodes);
    nodes_from(j.at("right"), nodes);
  }
  const auto id = static_cast<std::size_t>(node.id);
  if (node.id < 0) throw ParseError("negative node id");
  if (nodes.size() <= id) nodes.resize(id + 1);
  if (nodes[id]) throw ParseError("duplicate node id " + std::to_string(id));
  nodes[id] = std::move(node);
}

}  // namespace

std::string serialize_model(const ModelDocument& doc) {
  const auto& f = doc.forest;
  const auto& spec = f.spec();
  const auto& cfg = f.config();
  const auto& data = f.data();
  json j;
  j["format_version"] = ModelDocument::kFormatVersion;
  j["kind"] = doc.kind == ModelKind::Tree ? "tree" : "forest";
  j["dist"] = std::string(to_string(spec.dist));
  j["order"] = spec.basis.order();
  j["support"] = {spec.basis.support().lower(), spec.basis.support().upper()};

  const auto& tc = cfg.tree;
  j["tree_config"] = {{"alpha", tc.alpha},
                      {"bonferroni", tc.bonferroni},
                      {"stop_on_alpha", tc.stop_on_alpha},
                      {"minsplit", tc.minsplit},
                      {"minbucket", optional_json(tc.minbucket)},
                      {"mtry", optional_json(tc.mtry)},
                      {"max_depth", tc.max_depth ? json(*tc.max_depth) : json(nullptr)},
                      {"split_mode", split_mode_name(tc.split_mode)},
                      {"test_stat", tc.test_stat == TestStatistic::Quadratic ? "quadratic" : "maxabs"},
                      {"g_mode", tc.g_mode == SelectionStatistic::Linear ? "linear" : "maxselected"},
                      {"maxselected_resamples", tc.maxselected_resamples}};
  j["forest"] = {{"n_trees", cfg.n_trees},
                 {"subsample_fraction", cfg.subsample_fraction},
                 {"mtry", optional_json(cfg.mtry)},
                 {"seed", cfg.seed},
                 {"tree_kind", cfg.kind == TreeKind::MSE ? "mse" : "transformation"}};
  j["optimizer"] = {{"gap_tol", cfg.optimizer.gap_tol},
                    {"rel_tol", cfg.optimizer.rel_tol},
                    {"grad_tol", cfg.optimizer.grad_tol},
                    {"max_iter", cfg.optimizer.max_iter}};

  json schema = json::array();
  for (const auto& c : data.columns())
    schema.push_back({{"name", c.name}, {"scale", scale_name(c.scale)}, {"levels", c.levels}});
  j["schema"] = std::move(schema);

  json responses = json::array();
  for (const auto& r : data.responses()) responses.push_back(response_json(r));
  json x = json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::vector<double> row(data.n_predictors());
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = data.x(i, c);
    x.push_back(std::move(row));
  }
  j["training"] = {{"responses", std::move(responses)}, {"x", std::move(x)}};

  json trees = json::array();
  for (std::size_t t = 0; t < f.trees().size(); ++t)
    trees.push_back({{"subsample", f.subsamples()[t]}, {"root", node_json(f.trees()[t], 0, data.columns())}});
  j["trees"] = std::move(trees);
  return j.dump(1) + "\n";
}

ModelDocument parse_model(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model document is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format_version").get<int>() != ModelDocument::kFormatVersion)
      throw ParseError("unsupported model format version");
    const auto kind_name = j.at("kind").get<std::string>();
    if (kind_name != "tree" && kind_name != "forest") throw ParseError("unknown model kind '" + kind_name + "'");
    const auto dist = parse_distribution(j.at("dist").get<std::string>());
    if (!dist) throw ParseError("unknown base distribution");
    const auto& sup = j.at("support");
    const ModelSpec spec{BernsteinBasis(j.at("order").get<int>(), SupportInterval(sup.at(0).get<double>(), sup.at(1).get<double>())),
                         *dist};

    ForestConfig cfg;
    const auto& tc = j.at("tree_config");
    cfg.tree.alpha = tc.at("alpha").get<double>();
    cfg.tree.bonferroni = tc.at("bonferroni").get<bool>();
    cfg.tree.stop_on_alpha = tc.at("stop_on_alpha").get<bool>();
    cfg.tree.minsplit = tc.at("minsplit").get<std::size_t>();
    if (!tc.at("minbucket").is_null()) cfg.tree.minbucket = tc.at("minbucket").get<std::size_t>();
    if (!tc.at("mtry").is_null()) cfg.tree.mtry = tc.at("mtry").get<std::size_t>();
    if (!tc.at("max_depth").is_null()) cfg.tree.max_depth = tc.at("max_depth").get<int>();
    cfg.tree.split_mode = parse_split_mode(tc.at("split_mode").get<std::string>());
    cfg.tree.test_stat = tc.at("test_stat").get<std::string>() == "maxabs" ? TestStatistic::MaxAbs : TestStatistic::Quadratic;
    cfg.tree.g_mode = tc.at("g_mode").get<std::string>() == "maxselected" ? SelectionStatistic::MaxSelected
                                                                           : SelectionStatistic::Linear;
    cfg.tree.maxselected_resamples = tc.at("maxselected_resamples").get<int>();
    const auto& fc = j.at("forest");
    cfg.n_trees = fc.at("n_trees").get<std::size_t>();
    cfg.subsample_fraction = fc.at("subsample_fraction").get<double>();
    if (!fc.at("mtry").is_null()) cfg.mtry = fc.at("mtry").get<std::size_t>();
    cfg.seed = fc.at("seed").get<std::uint64_t>();
    cfg.kind = fc.at("tree_kind").get<std::string>() == "mse" ? TreeKind::MSE : TreeKind::Transformation;
    const auto& oc = j.at("optimizer");
    cfg.optimizer.gap_tol = oc.at("gap_tol").get<double>();
    cfg.optimizer.rel_tol = oc.at("rel_tol").get<double>();
    cfg.optimizer.grad_tol = oc.at("grad_tol").get<double>();
    cfg.optimizer.max_iter = oc.at("max_iter").get<int>();

    std::vector<Column> schema;
    for (const auto& c : j.at("schema"))
      schema.push_back({c.at("name").get<std::string>(), parse_scale(c.at("scale").get<std::string>()),
                        c.at("levels").get<std::vector<std::string>>()});
    std::vector<Response> responses;
    for (const auto& r : j.at("training").at("responses")) responses.push_back(response_from(r));
    const auto& xs = j.at("training").at("x");
    Eigen::MatrixXd x(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(schema.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (xs[i].size() != schema.size()) throw ParseError("training row " + std::to_string(i) + " has wrong width");
      for (std::size_t c = 0; c < schema.size(); ++c)
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = xs[i][c].get<double>();
    }
    Dataset data(std::move(responses), std::move(x), std::move(schema));

    std::vector<Tree> trees;
    std::vector<std::vector<std::size_t>> subsamples;
    for (const auto& t : j.at("trees")) {
      subsamples.push_back(t.at("subsample").get<std::vector<std::size_t>>());
      std::vector<std::optional<TreeNode>> slots;
      nodes_from(t.at("root"), slots);
      std::vector<TreeNode> nodes;
      for (auto& s : slots) {
        if (!s) throw ParseError("tree node ids are not contiguous");
        nodes.push_back(std::move(*s));
      }
      for (const auto& n : nodes) {
        if (n.theta.size() != spec.basis.dim()) throw ParseError("theta has the wrong length");
        for (Eigen::Index m = 1; m < n.theta.size(); ++m)
          if (!(n.theta[m] > n.theta[m - 1])) throw ParseError("theta is not strictly increasing");
        for (auto i : n.members)
          if (i >= data.size()) throw ParseError("leaf member index out of range");
        if (n.split && n.split->variable >= data.n_predictors()) throw ParseError("split variable out of range");
      }
      trees.emplace_back(spec, std::move(nodes));
    }
    if (trees.size() != cfg.n_trees) throw ParseError("tree count does not match the forest configuration");
    return {kind_name == "tree" ? ModelKind::Tree : ModelKind::Forest,
            Forest(std::move(data), spec, std::move(cfg), std::move(trees), std::move(subsamples))};
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed model document: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("invalid model document: ") + e.what());
  }
}

}  // namespace trafo
