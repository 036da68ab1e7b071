#pragma once

// Rank-based significance tests: Kruskal-Wallis and Wilcoxon rank-sum.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "trajektor/common.hpp"
#include "trajektor/csv.hpp"

namespace trajektor::stats {

enum class Method { kruskal_wallis, wilcoxon_exact, wilcoxon_normal };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::kruskal_wallis: return "kruskal_wallis";
    case Method::wilcoxon_exact: return "wilcoxon_exact";
    case Method::wilcoxon_normal: return "wilcoxon_normal";
  }
  return "?";
}

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  Method method = Method::kruskal_wallis;
  std::vector<std::size_t> group_sizes;
};

struct RankedSample {
  std::vector<double> ranks;  // midranks, aligned with the pooled input
  double tie_term = 0.0;      // sum over tie groups of (t^3 - t)
  bool has_ties = false;
};

inline RankedSample midranks(std::span<const double> pooled) {
  const std::size_t n = pooled.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
  RankedSample r;
  r.ranks.assign(n, 0.0);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t m = i; m <= j; ++m) r.ranks[order[m]] = rank;
    const double t = static_cast<double>(j - i + 1);
    if (t > 1) {
      r.tie_term += t * t * t - t;
      r.has_ties = true;
    }
    i = j + 1;
  }
  return r;
}

// H with midranks and tie correction; p from the chi-square distribution with
// (groups - 1) degrees of freedom. All-identical data gives H = 0, p = 1.
inline TestResult kruskal_wallis(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw ValidationError("kruskal_wallis: need at least two groups");
  std::vector<double> pooled;
  TestResult res;
  res.method = Method::kruskal_wallis;
  for (const auto& g : groups) {
    if (g.empty()) throw ValidationError("kruskal_wallis: every group must be nonempty");
    res.group_sizes.push_back(g.size());
    pooled.insert(pooled.end(), g.begin(), g.end());
  }
  const double N = static_cast<double>(pooled.size());
  if (pooled.size() < 3) throw ValidationError("kruskal_wallis: need at least three observations");
  const auto ranked = midranks(pooled);
  const double correction = 1.0 - ranked.tie_term / (N * N * N - N);
  if (correction <= 0.0) {
    res.statistic = 0.0;
    res.p_value = 1.0;
    return res;
  }
  double sum = 0.0;
  std::size_t offset = 0;
  for (const auto& g : groups) {
    double r = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) r += ranked.ranks[offset + i];
    offset += g.size();
    sum += r * r / static_cast<double>(g.size());
  }
  const double h = (12.0 / (N * (N + 1.0)) * sum - 3.0 * (N + 1.0)) / correction;
  res.statistic = std::max(0.0, h);
  const double df = static_cast<double>(groups.size() - 1);
  res.p_value = res.statistic > 0.0 ? boost::math::gamma_q(df / 2.0, res.statistic / 2.0) : 1.0;
  return res;
}

enum class RankSumMethod { automatic, exact, normal };

// Two-sided Wilcoxon rank-sum (Mann-Whitney) test of x against y. The
// statistic is W = R_x - m(m+1)/2.
//
// automatic: exact permutation distribution when both samples hold at most 12
// values and there are no ties, otherwise the normal approximation with
// tie-corrected variance and continuity correction. The exact method also
// accepts tied data (permutation distribution of the midrank sum).
inline TestResult rank_sum(std::span<const double> x, std::span<const double> y,
                           RankSumMethod method = RankSumMethod::automatic) {
  if (x.empty() || y.empty()) throw ValidationError("rank_sum: both samples must be nonempty");
  std::vector<double> pooled(x.begin(), x.end());
  pooled.insert(pooled.end(), y.begin(), y.end());
  const auto ranked = midranks(pooled);
  const std::size_t m = x.size(), n = y.size(), N = m + n;
  double rx = 0.0;
  for (std::size_t i = 0; i < m; ++i) rx += ranked.ranks[i];
  const double md = static_cast<double>(m), nd = static_cast<double>(n);
  TestResult res;
  res.group_sizes = {m, n};
  res.statistic = rx - md * (md + 1.0) / 2.0;

  const bool exact = method == RankSumMethod::exact ||
                     (method == RankSumMethod::automatic && m <= 12 && n <= 12 && !ranked.has_ties);
  if (exact) {
    if (N > 200) throw ValidationError("rank_sum: exact method limited to 200 pooled values");
    res.method = Method::wilcoxon_exact;
    // Doubled midranks are integers; count size-m subsets by doubled rank sum.
    std::vector<std::size_t> r2(N);
    std::size_t total = 0;
    for (std::size_t i = 0; i < N; ++i) total += r2[i] = static_cast<std::size_t>(std::lround(2.0 * ranked.ranks[i]));
    std::vector<std::vector<double>> ways(m + 1, std::vector<double>(total + 1, 0.0));
    ways[0][0] = 1.0;
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t j = std::min(i + 1, m); j >= 1; --j) {
        for (std::size_t s = total; s >= r2[i]; --s) ways[j][s] += ways[j - 1][s - r2[i]];
      }
    }
    const auto observed = static_cast<std::size_t>(std::lround(2.0 * rx));
    double all = 0.0, lower = 0.0, upper = 0.0;
    for (std::size_t s = 0; s <= total; ++s) {
      const double w = ways[m][s];
      all += w;
      if (s <= observed) lower += w;
      if (s >= observed) upper += w;
    }
    res.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / all);
    return res;
  }
  res.method = Method::wilcoxon_normal;
  const double Nd = static_cast<double>(N);
  const double mean = md * nd / 2.0;
  const double var = md * nd / 12.0 * ((Nd + 1.0) - ranked.tie_term / (Nd * (Nd - 1.0)));
  if (var <= 0.0) {
    res.p_value = 1.0;
    return res;
  }
  const double z = std::max(0.0, std::abs(res.statistic - mean) - 0.5) / std::sqrt(var);
  res.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return res;
}

// All pairwise rank-sum tests; result[i][j] compares group i (as x) with
// group j. Diagonal entries carry p = 1. With `bonferroni`, p-values are
// multiplied by the number of pairs and capped at 1.
inline std::vector<std::vector<TestResult>> pairwise_wilcoxon(const std::vector<std::vector<double>>& groups,
                                                              RankSumMethod method = RankSumMethod::automatic,
                                                              bool bonferroni = false) {
  if (groups.size() < 2) throw ValidationError("pairwise_wilcoxon: need at least two groups");
  for (const auto& g : groups) {
    if (g.empty()) throw ValidationError("pairwise_wilcoxon: every group must be nonempty");
  }
  const std::size_t G = groups.size();
  const double pairs = static_cast<double>(G * (G - 1) / 2);
  std::vector<std::vector<TestResult>> out(G, std::vector<TestResult>(G));
  for (std::size_t i = 0; i < G; ++i) {
    out[i][i].method = Method::wilcoxon_exact;
    out[i][i].group_sizes = {groups[i].size(), groups[i].size()};
    for (std::size_t j = i + 1; j < G; ++j) {
      auto r = rank_sum(groups[i], groups[j], method);
      if (bonferroni) r.p_value = std::min(1.0, r.p_value * pairs);
      out[i][j] = r;
      auto mirrored = r;
      mirrored.statistic = static_cast<double>(groups[i].size() * groups[j].size()) - r.statistic;
      mirrored.group_sizes = {groups[j].size(), groups[i].size()};
      out[j][i] = mirrored;
    }
  }
  return out;
}

}  // namespace trajektor::stats
