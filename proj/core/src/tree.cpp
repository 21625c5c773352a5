#include "trafo/tree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <boost/math/special_functions/gamma.hpp>

#include "trafo/errors.hpp"

namespace trafo {

namespace {

constexpr double kEigenCutoff = 1e-10;

struct PseudoInverse {
  Eigen::MatrixXd inverse;
  int rank = 0;
};

// Moore-Penrose inverse of a symmetric PSD matrix, eigenvalues below
// kEigenCutoff * lambda_max treated as zero.
PseudoInverse pseudo_inverse(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  const Eigen::VectorXd& values = eig.eigenvalues();
  const double lmax = values.size() > 0 ? values.maxCoeff() : 0.0;
  PseudoInverse out;
  out.inverse = Eigen::MatrixXd::Zero(m.rows(), m.cols());
  if (!(lmax > 0.0)) return out;
  for (Eigen::Index k = 0; k < values.size(); ++k) {
    if (values[k] > kEigenCutoff * lmax) {
      const auto v = eig.eigenvectors().col(k);
      out.inverse.noalias() += (1.0 / values[k]) * (v * v.transpose());
      ++out.rank;
    }
  }
  return out;
}

double chisq_sf(double x, int df) {
  if (df <= 0) return 1.0;
  if (!(x > 0.0)) return 1.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

double normal_sf(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

// Moments of the node's score matrix that every split candidate shares.
struct ScoreMoments {
  Eigen::VectorXd sum;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // 1/n normalisation, as in the permutation moments
  PseudoInverse pinv;
  double n = 0.0;
  bool zero = true;
};

ScoreMoments score_moments(const Eigen::MatrixXd& s) {
  ScoreMoments m;
  m.n = static_cast<double>(s.rows());
  m.sum = s.colwise().sum().transpose();
  m.mean = m.sum / m.n;
  const Eigen::MatrixXd centered = s.rowwise() - m.mean.transpose();
  m.cov = centered.transpose() * centered / m.n;
  m.pinv = pseudo_inverse(m.cov);
  const double lmax = m.cov.diagonal().maxCoeff();
  m.zero = !(lmax > 1e-16 * (1.0 + m.mean.squaredNorm())) || m.pinv.rank == 0;
  return m;
}

// Standardised statistic of a binary split with k observations on the left
// and left score sum t.
double split_criterion(const Eigen::VectorXd& t, double k, const ScoreMoments& m,
                       TestStatistic kind) {
  const double n = m.n;
  const double c = k * (n - k) / (n - 1.0);
  const Eigen::VectorXd d = t - k * m.mean;
  if (kind == TestStatistic::Quadratic) return d.dot(m.pinv.inverse * d) / c;
  double best = 0.0;
  for (Eigen::Index p = 0; p < d.size(); ++p) {
    const double v = c * m.cov(p, p);
    if (v > 1e-16 * (1.0 + m.mean.squaredNorm())) best = std::max(best, std::abs(d[p]) / std::sqrt(v));
  }
  return best;
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::vector<double> column_values(const Dataset& data, std::span<const std::size_t> rows,
                                  std::size_t j) {
  std::vector<double> v(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) v[r] = data.x(rows[r], j);
  return v;
}

// Positions (into rows) sorted by x, ties kept in input order.
std::vector<std::size_t> sorted_positions(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  return order;
}

struct ScanResult {
  double criterion = -std::numeric_limits<double>::infinity();
  std::size_t left_count = 0;  // split after this many sorted observations
  bool found = false;
};

// Ordered scan over split positions of pre-sorted x and scores.
ScanResult scan_ordered(const std::vector<double>& x_sorted, const Eigen::MatrixXd& s_sorted,
                        const ScoreMoments& m, std::size_t minbucket, TestStatistic kind) {
  ScanResult best;
  const std::size_t n = x_sorted.size();
  Eigen::VectorXd t = Eigen::VectorXd::Zero(s_sorted.cols());
  for (std::size_t k = 1; k < n; ++k) {
    t += s_sorted.row(static_cast<Eigen::Index>(k - 1)).transpose();
    if (k < minbucket || n - k < minbucket) continue;
    if (!(x_sorted[k - 1] < x_sorted[k])) continue;
    const double crit = split_criterion(t, static_cast<double>(k), m, kind);
    if (crit > best.criterion) {
      best = {crit, k, true};
    }
  }
  return best;
}

struct LevelSplit {
  std::vector<int> left, right;
  double criterion = -std::numeric_limits<double>::infinity();
  bool found = false;
};

// Enumerates level bipartitions (all of them for up to 12 levels; otherwise
// the ordered splits after sorting levels by `order_key`).
template <typename Eval>
LevelSplit best_level_split(const std::vector<int>& levels, const std::vector<std::size_t>& counts,
                            const std::vector<double>& order_key, std::size_t minbucket,
                            Eval&& eval) {
  LevelSplit best;
  const std::size_t L = levels.size();
  if (L < 2) return best;
  auto consider = [&](const std::vector<bool>& in_left) {
    std::size_t k = 0, total = 0;
    for (std::size_t l = 0; l < L; ++l) {
      total += counts[l];
      if (in_left[l]) k += counts[l];
    }
    if (k < minbucket || total - k < minbucket) return;
    const double crit = eval(in_left);
    if (crit > best.criterion) {
      best.criterion = crit;
      best.found = true;
      best.left.clear();
      best.right.clear();
      for (std::size_t l = 0; l < L; ++l) (in_left[l] ? best.left : best.right).push_back(levels[l]);
    }
  };
  std::vector<bool> in_left(L, false);
  if (L <= 12) {
    const std::uint64_t limit = std::uint64_t{1} << (L - 1);
    for (std::uint64_t mask = 1; mask < limit; ++mask) {
      for (std::size_t l = 0; l + 1 < L; ++l) in_left[l] = (mask >> l) & 1U;
      in_left[L - 1] = false;
      consider(in_left);
    }
  } else {
    std::vector<std::size_t> ord(L);
    std::iota(ord.begin(), ord.end(), 0);
    std::stable_sort(ord.begin(), ord.end(), [&](auto a, auto b) { return order_key[a] < order_key[b]; });
    for (std::size_t cut = 1; cut < L; ++cut) {
      std::fill(in_left.begin(), in_left.end(), false);
      for (std::size_t q = 0; q < cut; ++q) in_left[ord[q]] = true;
      consider(in_left);
    }
  }
  std::sort(best.left.begin(), best.left.end());
  std::sort(best.right.begin(), best.right.end());
  return best;
}

// Distinct levels present among rows, with per-level position lists.
struct LevelGroups {
  std::vector<int> levels;
  std::vector<std::vector<std::size_t>> positions;
};

LevelGroups group_levels(const std::vector<double>& x) {
  LevelGroups g;
  std::vector<int> codes(x.size());
  for (std::size_t r = 0; r < x.size(); ++r) codes[r] = static_cast<int>(x[r]);
  g.levels = codes;
  std::sort(g.levels.begin(), g.levels.end());
  g.levels.erase(std::unique(g.levels.begin(), g.levels.end()), g.levels.end());
  g.positions.resize(g.levels.size());
  for (std::size_t r = 0; r < codes.size(); ++r) {
    const auto it = std::lower_bound(g.levels.begin(), g.levels.end(), codes[r]);
    g.positions[static_cast<std::size_t>(it - g.levels.begin())].push_back(r);
  }
  return g;
}

double maxstat_criterion(const Dataset& data, std::span<const std::size_t> rows,
                         const Eigen::MatrixXd& scores, std::size_t j, const ScoreMoments& m,
                         const TreeConfig& config, SplitRecord* record) {
  const std::size_t minbucket = config.effective_minbucket();
  const auto x = column_values(data, rows, j);
  if (data.columns()[j].scale == Scale::Categorical) {
    const auto groups = group_levels(x);
    const std::size_t L = groups.levels.size();
    std::vector<std::size_t> counts(L);
    std::vector<Eigen::VectorXd> sums(L, Eigen::VectorXd::Zero(scores.cols()));
    std::vector<double> key(L);
    for (std::size_t l = 0; l < L; ++l) {
      counts[l] = groups.positions[l].size();
      for (auto r : groups.positions[l]) sums[l] += scores.row(static_cast<Eigen::Index>(r)).transpose();
      key[l] = sums[l][0] / static_cast<double>(counts[l]);
    }
    const auto best = best_level_split(groups.levels, counts, key, minbucket, [&](const std::vector<bool>& in_left) {
      Eigen::VectorXd t = Eigen::VectorXd::Zero(scores.cols());
      double k = 0.0;
      for (std::size_t l = 0; l < L; ++l) {
        if (!in_left[l]) continue;
        t += sums[l];
        k += static_cast<double>(counts[l]);
      }
      return split_criterion(t, k, m, config.test_stat);
    });
    if (!best.found) return -std::numeric_limits<double>::infinity();
    if (record) {
      record->variable = j;
      record->categorical = true;
      record->left_levels = best.left;
      record->right_levels = best.right;
      record->criterion = best.criterion;
    }
    return best.criterion;
  }
  const auto order = sorted_positions(x);
  std::vector<double> xs(order.size());
  Eigen::MatrixXd ss(static_cast<Eigen::Index>(order.size()), scores.cols());
  for (std::size_t r = 0; r < order.size(); ++r) {
    xs[r] = x[order[r]];
    ss.row(static_cast<Eigen::Index>(r)) = scores.row(static_cast<Eigen::Index>(order[r]));
  }
  const auto best = scan_ordered(xs, ss, m, minbucket, config.test_stat);
  if (!best.found) return -std::numeric_limits<double>::infinity();
  if (record) {
    record->variable = j;
    record->categorical = false;
    record->cutpoint = 0.5 * (xs[best.left_count - 1] + xs[best.left_count]);
    record->criterion = best.criterion;
  }
  return best.criterion;
}

// g(x) for the linear selection statistic.
Eigen::MatrixXd selection_design(const Dataset& data, std::span<const std::size_t> rows,
                                 std::size_t j) {
  const auto x = column_values(data, rows, j);
  const auto n = static_cast<Eigen::Index>(rows.size());
  switch (data.columns()[j].scale) {
    case Scale::Continuous: {
      Eigen::MatrixXd g(n, 1);
      for (Eigen::Index r = 0; r < n; ++r) g(r, 0) = x[static_cast<std::size_t>(r)];
      return g;
    }
    case Scale::Ordinal: {
      const auto ranks = average_ranks(x);
      Eigen::MatrixXd g(n, 1);
      for (Eigen::Index r = 0; r < n; ++r) g(r, 0) = ranks[static_cast<std::size_t>(r)];
      return g;
    }
    case Scale::Categorical: {
      const auto groups = group_levels(x);
      Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(groups.levels.size()));
      for (std::size_t l = 0; l < groups.levels.size(); ++l)
        for (auto r : groups.positions[l]) g(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(l)) = 1.0;
      return g;
    }
  }
  return {};
}

std::vector<Response> gather(const Dataset& data, std::span<const std::size_t> rows) {
  std::vector<Response> out;
  out.reserve(rows.size());
  for (auto i : rows) out.push_back(data.response(i));
  return out;
}

}  // namespace

std::size_t TreeConfig::effective_minbucket() const {
  return minbucket.value_or((minsplit + 2) / 3);
}

void TreeConfig::validate(int n_params) const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  if (minsplit < 2) throw std::invalid_argument("minsplit must be >= 2");
  const auto mb = effective_minbucket();
  if (mb < 1) throw std::invalid_argument("minbucket must be >= 1");
  if (mtry && *mtry == 0) throw std::invalid_argument("mtry must be >= 1");
  if (max_depth && *max_depth < 0) throw std::invalid_argument("max_depth must be >= 0");
  if (split_mode != SplitMode::ExhaustiveMSE && mb < static_cast<std::size_t>(n_params) + 1)
    throw std::invalid_argument("minbucket must be >= P + 1 for transformation fits");
}

LinearStatistic linear_statistic_moments(const Eigen::MatrixXd& g, const Eigen::MatrixXd& s) {
  if (g.rows() != s.rows()) throw std::invalid_argument("g and s differ in row count");
  const auto n = static_cast<double>(g.rows());
  if (n < 2) throw std::invalid_argument("permutation moments need N >= 2");
  const auto q = g.cols(), p = s.cols();

  LinearStatistic out;
  out.statistic = g.transpose() * s;
  const Eigen::VectorXd gsum = g.colwise().sum().transpose();
  const Eigen::VectorXd smean = s.colwise().mean().transpose();
  out.expectation = gsum * smean.transpose();

  const Eigen::MatrixXd centered = s.rowwise() - smean.transpose();
  const Eigen::MatrixXd vs = centered.transpose() * centered / n;
  const Eigen::MatrixXd ggt = g.transpose() * g;
  const Eigen::MatrixXd gg = n / (n - 1.0) * ggt - gsum * gsum.transpose() / (n - 1.0);
  out.covariance.resize(q * p, q * p);
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = 0; b < p; ++b)
      out.covariance.block(a * q, b * q, q, q) = vs(a, b) * gg;
  const double scale = 1.0 + smean.squaredNorm();
  out.zero_variance = !(vs.diagonal().maxCoeff() > 1e-16 * scale) ||
                      !(out.covariance.diagonal().maxCoeff() > 0.0);
  return out;
}

TestResult test_linear_statistic(const LinearStatistic& stat, TestStatistic kind) {
  TestResult out;
  if (stat.zero_variance) return out;
  const Eigen::MatrixXd diff = stat.statistic - stat.expectation;
  const Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(diff.data(), diff.size());
  if (kind == TestStatistic::Quadratic) {
    const auto pinv = pseudo_inverse(stat.covariance);
    if (pinv.rank == 0) return out;
    out.statistic = d.dot(pinv.inverse * d);
    out.df = pinv.rank;
    out.p_value = chisq_sf(out.statistic, out.df);
    out.zero_variance = false;
    return out;
  }
  const double vmax = stat.covariance.diagonal().maxCoeff();
  int components = 0;
  double best = 0.0;
  for (Eigen::Index k = 0; k < d.size(); ++k) {
    const double v = stat.covariance(k, k);
    if (!(v > kEigenCutoff * vmax)) continue;
    ++components;
    best = std::max(best, std::abs(d[k]) / std::sqrt(v));
  }
  if (components == 0) return out;
  out.statistic = best;
  out.df = components;
  out.p_value = std::min(1.0, 2.0 * components * normal_sf(best));
  out.zero_variance = false;
  return out;
}

std::vector<std::size_t> SelectionResult::ranked() const {
  std::vector<std::size_t> idx(candidates.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) {
    if (adjusted_p[a] != adjusted_p[b]) return adjusted_p[a] < adjusted_p[b];
    if (p_value[a] != p_value[b]) return p_value[a] < p_value[b];
    return candidates[a] < candidates[b];
  });
  std::vector<std::size_t> out;
  for (auto k : idx) out.push_back(candidates[k]);
  return out;
}

SelectionResult variable_selection(const Dataset& data, std::span<const std::size_t> rows,
                                   const Eigen::MatrixXd& scores,
                                   std::span<const std::size_t> candidates,
                                   const TreeConfig& config, Rng& rng) {
  SelectionResult out;
  out.candidates.assign(candidates.begin(), candidates.end());
  const auto k = candidates.size();
  out.statistic.assign(k, 0.0);
  out.p_value.assign(k, 1.0);
  out.adjusted_p.assign(k, 1.0);
  if (rows.size() < 2 || k == 0) return out;

  std::vector<bool> usable(k, false);
  if (config.g_mode == SelectionStatistic::Linear) {
    for (std::size_t c = 0; c < k; ++c) {
      const auto g = selection_design(data, rows, candidates[c]);
      const auto stat = linear_statistic_moments(g, scores);
      const auto res = test_linear_statistic(stat, config.test_stat);
      if (res.zero_variance) continue;
      usable[c] = true;
      out.statistic[c] = res.statistic;
      out.p_value[c] = res.p_value;
    }
  } else {
    // Maximally selected statistic with a Monte-Carlo permutation p-value.
    const auto m = score_moments(scores);
    if (!m.zero) {
      std::vector<std::size_t> perm(rows.size());
      std::iota(perm.begin(), perm.end(), 0);
      Eigen::MatrixXd permuted(scores.rows(), scores.cols());
      std::vector<double> observed(k, -std::numeric_limits<double>::infinity());
      std::vector<int> exceed(k, 0);
      for (std::size_t c = 0; c < k; ++c)
        observed[c] = maxstat_criterion(data, rows, scores, candidates[c], m, config, nullptr);
      for (int b = 0; b < config.maxselected_resamples; ++b) {
        std::shuffle(perm.begin(), perm.end(), rng);
        for (std::size_t r = 0; r < perm.size(); ++r)
          permuted.row(static_cast<Eigen::Index>(r)) = scores.row(static_cast<Eigen::Index>(perm[r]));
        for (std::size_t c = 0; c < k; ++c) {
          if (!std::isfinite(observed[c])) continue;
          const double v = maxstat_criterion(data, rows, permuted, candidates[c], m, config, nullptr);
          if (v >= observed[c] * (1.0 - 1e-12)) ++exceed[c];
        }
      }
      for (std::size_t c = 0; c < k; ++c) {
        if (!std::isfinite(observed[c])) continue;
        usable[c] = true;
        out.statistic[c] = observed[c];
        out.p_value[c] = (1.0 + exceed[c]) / (1.0 + config.maxselected_resamples);
      }
    }
  }

  for (std::size_t c = 0; c < k; ++c) {
    out.adjusted_p[c] = config.bonferroni ? std::min(1.0, out.p_value[c] * static_cast<double>(k))
                                          : out.p_value[c];
  }
  if (std::none_of(usable.begin(), usable.end(), [](bool u) { return u; })) return out;
  std::size_t best = k;
  for (std::size_t c = 0; c < k; ++c) {
    if (!usable[c]) continue;
    if (best == k || out.adjusted_p[c] < out.adjusted_p[best] ||
        (out.adjusted_p[c] == out.adjusted_p[best] &&
         (out.p_value[c] < out.p_value[best] ||
          (out.p_value[c] == out.p_value[best] && candidates[c] < candidates[best])))) {
      best = c;
    }
  }
  if (!config.stop_on_alpha || out.adjusted_p[best] <= config.alpha) out.best = candidates[best];
  return out;
}

std::optional<SplitRecord> split_maxstat(const Dataset& data, std::span<const std::size_t> rows,
                                         const Eigen::MatrixXd& scores, std::size_t variable,
                                         const TreeConfig& config) {
  if (static_cast<std::size_t>(scores.rows()) != rows.size())
    throw std::invalid_argument("score rows do not match node rows");
  if (rows.size() < 2) return std::nullopt;
  const auto m = score_moments(scores);
  if (m.zero) return std::nullopt;
  SplitRecord record;
  const double crit = maxstat_criterion(data, rows, scores, variable, m, config, &record);
  if (!std::isfinite(crit)) return std::nullopt;
  return record;
}

std::optional<SplitRecord> split_exhaustive_loglik(const Dataset& data,
                                                   std::span<const std::size_t> rows,
                                                   std::size_t variable, const ModelSpec& spec,
                                                   const TreeConfig& config,
                                                   const OptimizerOptions& options,
                                                   const Eigen::VectorXd* start,
                                                   std::size_t* evaluated) {
  const std::size_t minbucket = config.effective_minbucket();
  const auto x = column_values(data, rows, variable);
  std::size_t count = 0;
  std::optional<SplitRecord> best;

  auto child_loglik = [&](const std::vector<Response>& resp) {
    const std::vector<double> ones(resp.size(), 1.0);
    return fit_mle(spec, resp, ones, options, start).log_likelihood;
  };

  if (data.columns()[variable].scale == Scale::Categorical) {
    const auto groups = group_levels(x);
    const std::size_t L = groups.levels.size();
    std::vector<std::size_t> counts(L);
    std::vector<double> key(L, 0.0);
    for (std::size_t l = 0; l < L; ++l) counts[l] = groups.positions[l].size();
    const auto split = best_level_split(groups.levels, counts, key, minbucket, [&](const std::vector<bool>& in_left) {
      std::vector<Response> left, right;
      for (std::size_t l = 0; l < L; ++l)
        for (auto r : groups.positions[l]) (in_left[l] ? left : right).push_back(data.response(rows[r]));
      ++count;
      try {
        return child_loglik(left) + child_loglik(right);
      } catch (const Error&) {
        return -std::numeric_limits<double>::infinity();
      }
    });
    if (split.found && std::isfinite(split.criterion)) {
      best = SplitRecord{variable, true, 0.0, split.left, split.right, split.criterion};
    }
  } else {
    const auto order = sorted_positions(x);
    std::vector<Response> sorted;
    sorted.reserve(order.size());
    for (auto r : order) sorted.push_back(data.response(rows[r]));
    const std::size_t n = order.size();
    double best_ll = -std::numeric_limits<double>::infinity();
    std::size_t best_k = 0;
    const std::vector<double> ones(n, 1.0);
    for (std::size_t k = minbucket; k + minbucket <= n; ++k) {
      if (!(x[order[k - 1]] < x[order[k]])) continue;
      ++count;
      try {
        const std::span<const Response> all(sorted);
        const std::span<const double> w(ones);
        const double ll = fit_mle(spec, all.first(k), w.first(k), options, start).log_likelihood +
                          fit_mle(spec, all.subspan(k), w.subspan(k), options, start).log_likelihood;
        if (ll > best_ll) {
          best_ll = ll;
          best_k = k;
        }
      } catch (const Error&) {
        // candidate skipped
      }
    }
    if (best_k > 0) {
      SplitRecord rec;
      rec.variable = variable;
      rec.cutpoint = 0.5 * (x[order[best_k - 1]] + x[order[best_k]]);
      rec.criterion = best_ll;
      best = rec;
    }
  }
  if (evaluated) *evaluated = count;
  return best;
}

std::optional<SplitRecord> split_mse(const Dataset& data, std::span<const std::size_t> rows,
                                     std::span<const std::size_t> candidates,
                                     const TreeConfig& config) {
  const std::size_t minbucket = config.effective_minbucket();
  const std::size_t n = rows.size();
  std::vector<double> y(n);
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const auto& resp = data.response(rows[r]);
    if (!resp.is_exact() || resp.is_truncated())
      throw UnsupportedResponseError("MSE splitting needs exact, untruncated responses");
    y[r] = resp.low;
    sum += y[r];
    sum2 += y[r] * y[r];
  }
  const double sse_node = sum2 - sum * sum / static_cast<double>(n);
  if (!(sse_node > 1e-12 * (1.0 + sum2))) return std::nullopt;

  auto sse = [](double s, double s2, double k) { return s2 - s * s / k; };
  std::optional<SplitRecord> best;
  double best_gain = 1e-12 * sse_node;
  std::vector<std::size_t> cands(candidates.begin(), candidates.end());
  std::sort(cands.begin(), cands.end());
  for (auto j : cands) {
    const auto x = column_values(data, rows, j);
    if (data.columns()[j].scale == Scale::Categorical) {
      // Ordering levels by mean response makes the ordered scan optimal.
      const auto groups = group_levels(x);
      const std::size_t L = groups.levels.size();
      if (L < 2) continue;
      std::vector<double> ls(L, 0.0), ls2(L, 0.0), mean(L);
      std::vector<std::size_t> cnt(L);
      for (std::size_t l = 0; l < L; ++l) {
        cnt[l] = groups.positions[l].size();
        for (auto r : groups.positions[l]) {
          ls[l] += y[r];
          ls2[l] += y[r] * y[r];
        }
        mean[l] = ls[l] / static_cast<double>(cnt[l]);
      }
      std::vector<std::size_t> ord(L);
      std::iota(ord.begin(), ord.end(), 0);
      std::stable_sort(ord.begin(), ord.end(), [&](auto a, auto b) { return mean[a] < mean[b]; });
      double s = 0.0, s2 = 0.0;
      std::size_t k = 0;
      for (std::size_t q = 0; q + 1 < L; ++q) {
        s += ls[ord[q]];
        s2 += ls2[ord[q]];
        k += cnt[ord[q]];
        if (k < minbucket || n - k < minbucket) continue;
        const double gain = sse_node - sse(s, s2, static_cast<double>(k)) -
                            sse(sum - s, sum2 - s2, static_cast<double>(n - k));
        if (gain > best_gain) {
          best_gain = gain;
          SplitRecord rec;
          rec.variable = j;
          rec.categorical = true;
          for (std::size_t t = 0; t < L; ++t)
            (t <= q ? rec.left_levels : rec.right_levels).push_back(groups.levels[ord[t]]);
          std::sort(rec.left_levels.begin(), rec.left_levels.end());
          std::sort(rec.right_levels.begin(), rec.right_levels.end());
          rec.criterion = gain;
          best = rec;
        }
      }
      continue;
    }
    const auto order = sorted_positions(x);
    double s = 0.0, s2 = 0.0;
    for (std::size_t k = 1; k < n; ++k) {
      const double v = y[order[k - 1]];
      s += v;
      s2 += v * v;
      if (k < minbucket || n - k < minbucket) continue;
      if (!(x[order[k - 1]] < x[order[k]])) continue;
      const double gain = sse_node - sse(s, s2, static_cast<double>(k)) -
                          sse(sum - s, sum2 - s2, static_cast<double>(n - k));
      if (gain > best_gain) {
        best_gain = gain;
        SplitRecord rec;
        rec.variable = j;
        rec.cutpoint = 0.5 * (x[order[k - 1]] + x[order[k]]);
        rec.criterion = gain;
        best = rec;
      }
    }
  }
  return best;
}

Tree::Tree(ModelSpec spec, std::vector<TreeNode> nodes)
    : spec_(std::move(spec)), nodes_(std::move(nodes)) {
  if (nodes_.empty()) throw std::invalid_argument("tree needs a root node");
}

int Tree::child_for(const TreeNode& node, double value) const {
  const auto& split = *node.split;
  if (!split.categorical) return value <= split.cutpoint ? node.left : node.right;
  const int level = static_cast<int>(value);
  if (std::binary_search(split.left_levels.begin(), split.left_levels.end(), level)) return node.left;
  if (std::binary_search(split.right_levels.begin(), split.right_levels.end(), level)) return node.right;
  // Unseen level: follow the larger child.
  return nodes_[static_cast<std::size_t>(node.left)].n >= nodes_[static_cast<std::size_t>(node.right)].n
             ? node.left
             : node.right;
}

int Tree::leaf_for(std::span<const double> x) const {
  int id = 0;
  while (!nodes_[static_cast<std::size_t>(id)].is_leaf()) {
    const auto& node = nodes_[static_cast<std::size_t>(id)];
    id = child_for(node, x[node.split->variable]);
  }
  return id;
}

int Tree::leaf_for(const Eigen::VectorXd& x) const {
  return leaf_for(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
}

TransformationModel Tree::model_at(const Eigen::VectorXd& x) const {
  return {spec_.basis, spec_.dist, node(leaf_for(x)).theta};
}

std::size_t Tree::n_leaves() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

std::vector<std::size_t> Tree::subsample() const {
  std::vector<std::size_t> out;
  for (const auto& n : nodes_)
    if (n.is_leaf()) out.insert(out.end(), n.members.begin(), n.members.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> draw_candidates(std::size_t n_predictors, std::optional<std::size_t> k,
                                         Rng& rng) {
  std::vector<std::size_t> all(n_predictors);
  std::iota(all.begin(), all.end(), 0);
  if (!k || *k >= n_predictors) return all;
  for (std::size_t i = 0; i < *k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n_predictors - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(*k);
  std::sort(all.begin(), all.end());
  return all;
}

namespace {

class TreeGrower {
 public:
  TreeGrower(const Dataset& data, const ModelSpec& spec, const TreeConfig& config, Rng& rng,
             const OptimizerOptions& options, bool mse)
      : data_(data), spec_(spec), config_(config), rng_(rng), options_(options), mse_(mse) {}

  std::vector<TreeNode> grow(std::span<const std::size_t> subsample) {
    std::vector<std::size_t> rows(subsample.begin(), subsample.end());
    grow_node(std::move(rows), 0, nullptr);
    return std::move(nodes_);
  }

 private:
  int grow_node(std::vector<std::size_t> rows, int depth, const Eigen::VectorXd* parent_theta) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    nodes_.back().id = id;
    nodes_.back().depth = depth;
    nodes_.back().n = rows.size();

    const auto resp = gather(data_, rows);
    std::optional<TransformationModel> model;
    try {
      const std::vector<double> ones(resp.size(), 1.0);
      model = fit_mle(spec_, resp, ones, options_, parent_theta).model;
    } catch (const Error&) {
      if (parent_theta == nullptr) throw;
    }
    Eigen::VectorXd theta = model ? model->theta() : *parent_theta;
    nodes_[static_cast<std::size_t>(id)].theta = theta;

    auto make_leaf = [&] {
      auto& node = nodes_[static_cast<std::size_t>(id)];
      std::sort(rows.begin(), rows.end());
      node.members = std::move(rows);
      return id;
    };
    if (!model) return make_leaf();
    if (rows.size() < config_.minsplit) return make_leaf();
    if (config_.max_depth && depth >= *config_.max_depth) return make_leaf();

    const auto candidates = draw_candidates(data_.n_predictors(), config_.mtry, rng_);
    std::optional<SplitRecord> split;
    if (mse_) {
      split = split_mse(data_, rows, candidates, config_);
    } else {
      Eigen::MatrixXd scores;
      try {
        scores = score_matrix(*model, data_.responses(), rows);
      } catch (const Error&) {
        return make_leaf();
      }
      const auto sel = variable_selection(data_, rows, scores, candidates, config_, rng_);
      if (!sel.best) return make_leaf();
      for (auto j : sel.ranked()) {
        const auto pos = std::find(sel.candidates.begin(), sel.candidates.end(), j) - sel.candidates.begin();
        if (config_.stop_on_alpha && sel.adjusted_p[static_cast<std::size_t>(pos)] > config_.alpha) break;
        if (sel.p_value[static_cast<std::size_t>(pos)] >= 1.0 && sel.statistic[static_cast<std::size_t>(pos)] == 0.0) continue;
        if (config_.split_mode == SplitMode::ExhaustiveLikelihood) {
          split = split_exhaustive_loglik(data_, rows, j, spec_, config_, options_, &theta);
        } else {
          split = split_maxstat(data_, rows, scores, j, config_);
        }
        if (split) break;
      }
    }
    if (!split) return make_leaf();

    std::vector<std::size_t> left, right;
    for (auto i : rows) {
      const double v = data_.x(i, split->variable);
      bool go_left;
      if (split->categorical) {
        go_left = std::binary_search(split->left_levels.begin(), split->left_levels.end(), static_cast<int>(v));
      } else {
        go_left = v <= split->cutpoint;
      }
      (go_left ? left : right).push_back(i);
    }
    if (left.empty() || right.empty()) return make_leaf();

    nodes_[static_cast<std::size_t>(id)].split = *split;
    const int l = grow_node(std::move(left), depth + 1, &theta);
    const int r = grow_node(std::move(right), depth + 1, &theta);
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  const Dataset& data_;
  const ModelSpec& spec_;
  const TreeConfig& config_;
  Rng& rng_;
  const OptimizerOptions& options_;
  bool mse_;
  std::vector<TreeNode> nodes_;
};

}  // namespace

Tree grow_tree(const Dataset& data, std::span<const std::size_t> subsample, const ModelSpec& spec,
               const TreeConfig& config, Rng& rng, const OptimizerOptions& options) {
  config.validate(spec.basis.dim());
  if (subsample.empty()) throw std::invalid_argument("empty subsample");
  if (config.split_mode == SplitMode::ExhaustiveMSE)
    return grow_tree_mse(data, subsample, spec, config, rng, options);
  TreeGrower grower(data, spec, config, rng, options, false);
  return Tree(spec, grower.grow(subsample));
}

Tree grow_tree_mse(const Dataset& data, std::span<const std::size_t> subsample,
                   const ModelSpec& spec, const TreeConfig& config, Rng& rng,
                   const OptimizerOptions& options) {
  config.validate(spec.basis.dim());
  if (subsample.empty()) throw std::invalid_argument("empty subsample");
  for (auto i : subsample) {
    const auto& r = data.response(i);
    if (!r.is_exact() || r.is_truncated())
      throw UnsupportedResponseError("MSE baseline tree needs exact, untruncated responses");
  }
  TreeGrower grower(data, spec, config, rng, options, true);
  return Tree(spec, grower.grow(subsample));
}

std::vector<double> tree_weights(const Tree& tree, const Eigen::VectorXd& x, std::size_t n_obs) {
  std::vector<double> w(n_obs, 0.0);
  for (auto i : tree.node(tree.leaf_for(x)).members) w[i] = 1.0;
  return w;
}

}  // namespace trafo
