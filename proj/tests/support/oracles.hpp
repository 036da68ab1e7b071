#pragma once

// Independent reference computations used only by the test suites. None of
// these share code paths with the library implementations they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <vector>

#include "trajektor/lmm.hpp"

namespace oracle {

using trajektor::Label;
using trajektor::LatentMarkovModel;
using trajektor::State;

// Enumerates every state path of length T in lexicographic order.
template <typename F>
void for_each_path(std::size_t K, std::size_t T, F&& f) {
  std::vector<State> path(T, 0);
  while (true) {
    f(path);
    std::size_t t = T;
    while (t > 0) {
      --t;
      if (++path[t] < K) break;
      path[t] = 0;
      if (t == 0) return;
    }
    if (T == 0) return;
  }
}

inline double joint_probability(const LatentMarkovModel& m, const std::vector<State>& path,
                                const std::vector<Label>& seq) {
  double p = m.initial(path[0]) * m.emission(path[0], seq[0]);
  for (std::size_t t = 1; t < seq.size(); ++t) p *= m.transition(path[t - 1], path[t]) * m.emission(path[t], seq[t]);
  return p;
}

// log of the sum over all K^T state paths.
inline double brute_force_loglik(const LatentMarkovModel& m, const std::vector<Label>& seq) {
  double total = 0.0;
  for_each_path(m.states(), seq.size(), [&](const std::vector<State>& path) { total += joint_probability(m, path, seq); });
  return std::log(total);
}

// Max over all K^T paths of the joint probability.
inline double brute_force_max_path(const LatentMarkovModel& m, const std::vector<Label>& seq) {
  double best = 0.0;
  for_each_path(m.states(), seq.size(), [&](const std::vector<State>& path) {
    best = std::max(best, joint_probability(m, path, seq));
  });
  return best;
}

inline std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t n) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> v(n);
  double s = 0.0;
  for (auto& x : v) s += x = e(rng);
  for (auto& x : v) x /= s;
  return v;
}

inline LatentMarkovModel random_model(std::mt19937_64& rng, std::size_t K, std::size_t L) {
  std::vector<std::vector<double>> A, B;
  for (std::size_t k = 0; k < K; ++k) {
    A.push_back(random_simplex(rng, K));
    B.push_back(random_simplex(rng, L));
  }
  return LatentMarkovModel(random_simplex(rng, K), A, B);
}

// Stationary distribution of a row-stochastic matrix by power iteration.
inline std::vector<double> stationary(const LatentMarkovModel& m) {
  const std::size_t K = m.states();
  std::vector<double> v(K, 1.0 / static_cast<double>(K)), next(K);
  for (int it = 0; it < 200000; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < K; ++i) {
      for (std::size_t j = 0; j < K; ++j) next[j] += v[i] * m.transition(i, j);
    }
    double diff = 0.0;
    for (std::size_t i = 0; i < K; ++i) diff += std::abs(next[i] - v[i]);
    v.swap(next);
    if (diff < 1e-15) break;
  }
  return v;
}

// O(n^2) mean absolute difference form.
inline double pairwise_gini(const std::vector<double>& x) {
  long double num = 0.0L, sum = 0.0L;
  for (double a : x) {
    sum += a;
    for (double b : x) num += std::fabs(static_cast<long double>(a) - b);
  }
  const long double n = static_cast<long double>(x.size());
  return static_cast<double>(num / (2.0L * n * n * (sum / n)));
}

// Two-sided exact rank-sum p-value by enumerating all size-m subsets of the
// pooled (untied) ranks 1..N.
inline double enumerated_rank_sum_p(std::size_t m, std::size_t n, double observed_rank_sum) {
  const std::size_t N = m + n;
  std::vector<bool> pick(N, false);
  std::fill(pick.begin(), pick.begin() + static_cast<long>(m), true);
  double total = 0, lower = 0, upper = 0;
  do {
    double s = 0;
    for (std::size_t i = 0; i < N; ++i) {
      if (pick[i]) s += static_cast<double>(i + 1);
    }
    total += 1;
    if (s <= observed_rank_sum) lower += 1;
    if (s >= observed_rank_sum) upper += 1;
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return std::min(1.0, 2.0 * std::min(lower, upper) / total);
}

// Adjusted Rand index between two labelings.
inline double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::map<std::pair<std::size_t, std::size_t>, double> joint;
  std::map<std::size_t, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  auto c2 = [](double x) { return x * (x - 1) / 2; };
  double sum_joint = 0, sum_a = 0, sum_b = 0;
  for (auto& [k, v] : joint) sum_joint += c2(v);
  for (auto& [k, v] : ra) sum_a += c2(v);
  for (auto& [k, v] : rb) sum_b += c2(v);
  const double expected = sum_a * sum_b / c2(static_cast<double>(a.size()));
  const double max_index = (sum_a + sum_b) / 2;
  if (max_index == expected) return 1.0;
  return (sum_joint - expected) / (max_index - expected);
}

}  // namespace oracle
