#pragma once

// Categorical latent Markov model with time-homogeneous transitions:
// likelihood, EM fitting, decoding, model selection and synthetic generation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajektor/binning.hpp"
#include "trajektor/common.hpp"
#include "trajektor/rng.hpp"

namespace trajektor {

using State = std::uint8_t;

// pi (K), A (K x K, row-major, A[i][j] = P(next = j | current = i)) and
// B (K x L, row-major, B[k][l] = P(label l | state k)).
class LatentMarkovModel {
 public:
  LatentMarkovModel() = default;
  LatentMarkovModel(std::size_t states, std::size_t labels)
      : states_(states),
        labels_(labels),
        initial_(states, 1.0 / static_cast<double>(states)),
        transition_(states * states, 1.0 / static_cast<double>(states)),
        emission_(states * labels, 1.0 / static_cast<double>(labels)) {
    if (states == 0 || states > 64) throw ValidationError("state count must lie in [1, 64]");
    if (labels < 1) throw ValidationError("label count must be positive");
  }

  LatentMarkovModel(std::vector<double> initial, std::vector<std::vector<double>> transition,
                    std::vector<std::vector<double>> emission)
      : LatentMarkovModel(initial.size(), emission.empty() ? 0 : emission.front().size()) {
    initial_ = std::move(initial);
    if (transition.size() != states_ || emission.size() != states_) {
      throw ValidationError("transition and emission matrices need one row per state");
    }
    for (std::size_t i = 0; i < states_; ++i) {
      if (transition[i].size() != states_ || emission[i].size() != labels_) {
        throw ValidationError("ragged transition or emission matrix");
      }
      std::copy(transition[i].begin(), transition[i].end(), transition_.begin() + i * states_);
      std::copy(emission[i].begin(), emission[i].end(), emission_.begin() + i * labels_);
    }
    validate();
  }

  std::size_t states() const { return states_; }
  std::size_t labels() const { return labels_; }

  double initial(std::size_t k) const { return initial_[k]; }
  double& initial(std::size_t k) { return initial_[k]; }
  double transition(std::size_t i, std::size_t j) const { return transition_[i * states_ + j]; }
  double& transition(std::size_t i, std::size_t j) { return transition_[i * states_ + j]; }
  double emission(std::size_t k, std::size_t l) const { return emission_[k * labels_ + l]; }
  double& emission(std::size_t k, std::size_t l) { return emission_[k * labels_ + l]; }

  std::span<const double> initial_row() const { return initial_; }
  std::span<const double> transition_row(std::size_t i) const { return {transition_.data() + i * states_, states_}; }
  std::span<const double> emission_row(std::size_t k) const { return {emission_.data() + k * labels_, labels_}; }

  // Throws unless pi and every row of A and B is a distribution within `tol`.
  void validate(double tol = 1e-9) const {
    auto check = [tol](std::span<const double> row, const char* what) {
      double s = 0.0;
      for (double v : row) {
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(std::string(what) + " entry outside [0, 1]");
        s += v;
      }
      if (std::abs(s - 1.0) > tol) throw ValidationError(std::string(what) + " row does not sum to 1");
    };
    check(initial_, "initial distribution");
    for (std::size_t k = 0; k < states_; ++k) {
      check(transition_row(k), "transition");
      check(emission_row(k), "emission");
    }
  }

  bool is_valid(double tol = 1e-9) const {
    try {
      validate(tol);
      return true;
    } catch (const ValidationError&) {
      return false;
    }
  }

  bool operator==(const LatentMarkovModel&) const = default;

 private:
  std::size_t states_ = 0;
  std::size_t labels_ = 0;
  std::vector<double> initial_;
  std::vector<double> transition_;
  std::vector<double> emission_;
};

// Three-state reference model with two-decimal parameters, used to plant
// synthetic corpora. The middle emission row 0.45/0.32/0.22 sums to 0.99, so
// it is renormalized here.
inline LatentMarkovModel reference_model() {
  return LatentMarkovModel({1.0 / 3, 1.0 / 3, 1.0 / 3},
                           {{0.99, 0.01, 0.00}, {0.03, 0.96, 0.01}, {0.02, 0.03, 0.95}},
                           {{0.95, 0.03, 0.02}, {0.45 / 0.99, 0.32 / 0.99, 0.22 / 0.99}, {0.06, 0.13, 0.81}});
}

namespace detail {

inline double log_or_ninf(double p) {
  return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
}

inline double log_sum_exp(std::span<const double> xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline void check_sequence(const LatentMarkovModel& model, std::span<const Label> seq) {
  if (seq.empty()) throw ValidationError("sequence must hold at least one observation");
  for (Label o : seq) {
    if (o >= model.labels()) throw ValidationError("observation label outside the model's label range");
  }
}

// Expected sufficient statistics accumulated over sequences.
struct Accumulator {
  std::size_t K = 0, L = 0;
  std::vector<double> initial, transition, emission;

  Accumulator(std::size_t k, std::size_t l)
      : K(k), L(l), initial(k, 0.0), transition(k * k, 0.0), emission(k * l, 0.0) {}
};

// Log-space forward-backward; used when scaling constants degenerate.
inline double accumulate_logspace(const LatentMarkovModel& m, std::span<const Label> seq, Accumulator* acc) {
  const std::size_t K = m.states(), T = seq.size();
  std::vector<double> la(T * K), lb(T * K, 0.0), tmp(K);
  for (std::size_t k = 0; k < K; ++k) la[k] = log_or_ninf(m.initial(k)) + log_or_ninf(m.emission(k, seq[0]));
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t j = 0; j < K; ++j) {
      for (std::size_t i = 0; i < K; ++i) tmp[i] = la[(t - 1) * K + i] + log_or_ninf(m.transition(i, j));
      la[t * K + j] = log_sum_exp(tmp) + log_or_ninf(m.emission(j, seq[t]));
    }
  }
  const double ll = log_sum_exp(std::span<const double>(la.data() + (T - 1) * K, K));
  if (!acc || ll == -std::numeric_limits<double>::infinity()) return ll;
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t i = 0; i < K; ++i) {
      for (std::size_t j = 0; j < K; ++j) {
        tmp[j] = log_or_ninf(m.transition(i, j)) + log_or_ninf(m.emission(j, seq[t + 1])) + lb[(t + 1) * K + j];
      }
      lb[t * K + i] = log_sum_exp(tmp);
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      const double g = std::exp(la[t * K + k] + lb[t * K + k] - ll);
      if (t == 0) acc->initial[k] += g;
      acc->emission[k * acc->L + seq[t]] += g;
    }
    if (t + 1 == T) break;
    for (std::size_t i = 0; i < K; ++i) {
      for (std::size_t j = 0; j < K; ++j) {
        acc->transition[i * K + j] += std::exp(la[t * K + i] + log_or_ninf(m.transition(i, j)) +
                                               log_or_ninf(m.emission(j, seq[t + 1])) + lb[(t + 1) * K + j] - ll);
      }
    }
  }
  return ll;
}

// Scaled forward-backward kernel. KC fixes the state count at compile time
// so the inner loops unroll; KC == 0 reads it from the model. The backward
// pass is fused with the expected-count accumulation, and per-step state lives
// in local arrays so the compiler can keep it in registers.
template <std::size_t KC>
double accumulate_k(const LatentMarkovModel& m, std::span<const Label> seq, Accumulator* acc,
                    std::vector<double>& alpha, std::vector<double>& inv_scale) {
  constexpr std::size_t KM = KC ? KC : 64;  // models hold at most 64 states
  const std::size_t K = KC ? KC : m.states(), T = seq.size(), L = m.labels();
  alpha.resize(T * K);
  inv_scale.resize(T);
  constexpr double kTiny = std::numeric_limits<double>::min();
  double A[KM * KM];
  std::copy_n(m.transition_row(0).data(), K * K, A);
  const double* B = m.emission_row(0).data();  // row-major K x L
  double* al = alpha.data();
  double* is = inv_scale.data();

  // Alpha is rescaled only when its sum drops below kRescale, which keeps the
  // division off the step-to-step dependency chain. Any positive scaling
  // constants give the same posteriors once the final sum is folded into beta.
  constexpr double kRescale = 1e-100;
  // AB[o] holds A(i,j) * B(j,o), so each step is one matrix-vector product.
  thread_local std::vector<double> ab_store;
  ab_store.resize(L * K * K);
  double* AB = ab_store.data();
  for (std::size_t o = 0; o < L; ++o) {
    for (std::size_t i = 0; i < K; ++i) {
      for (std::size_t j = 0; j < K; ++j) AB[(o * K + i) * K + j] = A[i * K + j] * B[j * L + o];
    }
  }
  double ll = 0.0;
  double prev[KM], tmp[KM];
  double c = 0.0;
  for (std::size_t k = 0; k < K; ++k) c += prev[k] = m.initial(k) * B[k * L + seq[0]];
  if (!(c > kTiny)) return accumulate_logspace(m, seq, acc);
  is[0] = 1.0;
  for (std::size_t k = 0; k < K; ++k) al[k] = prev[k];
  for (std::size_t t = 1; t < T; ++t) {
    const double* M = AB + seq[t] * K * K;
    for (std::size_t j = 0; j < K; ++j) tmp[j] = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
      const double p = prev[i];
      for (std::size_t j = 0; j < K; ++j) tmp[j] += p * M[i * K + j];
    }
    c = 0.0;
    for (std::size_t j = 0; j < K; ++j) c += tmp[j];
    double* cur = al + t * K;
    if (c < kRescale) {
      if (!(c > kTiny)) return accumulate_logspace(m, seq, acc);
      ll += std::log(c);
      const double inv = is[t] = 1.0 / c;
      for (std::size_t j = 0; j < K; ++j) cur[j] = prev[j] = tmp[j] * inv;
    } else {
      is[t] = 1.0;
      for (std::size_t j = 0; j < K; ++j) cur[j] = prev[j] = tmp[j];
    }
  }
  double last = 0.0;
  for (std::size_t k = 0; k < K; ++k) last += al[(T - 1) * K + k];
  ll += std::log(last);
  if (!acc) return ll;

  // xi collects sum_t alpha_t(i) w_t(j); A(i,j) is applied once at the end.
  double next[KM], cur[KM], w[KM], xi[KM * KM];
  std::fill_n(xi, K * K, 0.0);
  for (std::size_t k = 0; k < K; ++k) next[k] = 1.0 / last;
  double* em = acc->emission.data();
  {
    const double* a = al + (T - 1) * K;
    const Label o = seq[T - 1];
    for (std::size_t k = 0; k < K; ++k) em[k * L + o] += a[k] * next[k];
  }
  for (std::size_t t = T - 1; t-- > 0;) {
    const Label o = seq[t + 1];
    const double inv = is[t + 1];
    const double* M = AB + o * K * K;
    double v[KM];
    for (std::size_t j = 0; j < K; ++j) {
      v[j] = next[j] * inv;
      w[j] = B[j * L + o] * v[j];
    }
    const double* a = al + t * K;
    for (std::size_t i = 0; i < K; ++i) {
      const double ai = a[i];
      double s = 0.0;
      for (std::size_t j = 0; j < K; ++j) {
        s += M[i * K + j] * v[j];
        xi[i * K + j] += ai * w[j];
      }
      cur[i] = s;
    }
    const Label ot = seq[t];
    for (std::size_t k = 0; k < K; ++k) {
      next[k] = cur[k];
      em[k * L + ot] += a[k] * cur[k];
    }
  }
  // After the loop `next` holds the scaled beta_0.
  for (std::size_t k = 0; k < K; ++k) acc->initial[k] += al[k] * next[k];
  for (std::size_t i = 0; i < K * K; ++i) acc->transition[i] += A[i] * xi[i];
  return ll;
}

// Returns the sequence log-likelihood and, when `acc` is given, adds the
// sequence's expected counts to it.
inline double accumulate(const LatentMarkovModel& m, std::span<const Label> seq, Accumulator* acc,
                         std::vector<double>& alpha, std::vector<double>& scale) {
  switch (m.states()) {
    case 1: return accumulate_k<1>(m, seq, acc, alpha, scale);
    case 2: return accumulate_k<2>(m, seq, acc, alpha, scale);
    case 3: return accumulate_k<3>(m, seq, acc, alpha, scale);
    case 4: return accumulate_k<4>(m, seq, acc, alpha, scale);
    case 5: return accumulate_k<5>(m, seq, acc, alpha, scale);
    case 6: return accumulate_k<6>(m, seq, acc, alpha, scale);
    default: return accumulate_k<0>(m, seq, acc, alpha, scale);
  }
}

}  // namespace detail

// log P(seq | model) by the scaled forward recursion. Returns -infinity when
// the sequence has zero probability under the model.
inline double log_likelihood(const LatentMarkovModel& model, std::span<const Label> seq) {
  detail::check_sequence(model, seq);
  std::vector<double> a, s;
  return detail::accumulate(model, seq, nullptr, a, s);
}

inline double log_likelihood(const LatentMarkovModel& model, const ObservationMatrix& obs) {
  std::vector<double> a, s;
  double total = 0.0;
  for (std::size_t u = 0; u < obs.user_count(); ++u) {
    detail::check_sequence(model, obs.row(u));
    total += detail::accumulate(model, obs.row(u), nullptr, a, s);
  }
  return total;
}

struct EmConfig {
  enum class Init { random, spread };
  std::size_t restarts = 10;
  std::size_t max_iter = 500;
  double tol = 1e-6;
  std::uint64_t seed = 1;
  Init init = Init::random;
};

struct FitResult {
  LatentMarkovModel model;
  double loglik = -std::numeric_limits<double>::infinity();
  std::size_t iterations = 0;
  bool converged = false;
  bool degenerate = false;  // more states than distinct observed sequences
  std::vector<double> restart_logliks;
  std::vector<double> trace;  // per-iteration loglik of the returned restart
  std::uint64_t seed = 0;
};

namespace detail {

inline void fill_simplex(Rng& rng, std::span<double> row) {
  double s = 0.0;
  for (double& v : row) s += v = -std::log(1.0 - rng.uniform());
  for (double& v : row) v /= s;
}

inline LatentMarkovModel initial_model(const ObservationMatrix& obs, std::size_t K, EmConfig::Init init, Rng& rng) {
  const std::size_t L = obs.label_count();
  LatentMarkovModel m(K, L);
  if (init == EmConfig::Init::random) {
    std::vector<double> row(std::max(K, L));
    fill_simplex(rng, std::span(row.data(), K));
    for (std::size_t k = 0; k < K; ++k) m.initial(k) = row[k];
    for (std::size_t i = 0; i < K; ++i) {
      fill_simplex(rng, std::span(row.data(), K));
      for (std::size_t j = 0; j < K; ++j) m.transition(i, j) = row[j];
      fill_simplex(rng, std::span(row.data(), L));
      for (std::size_t l = 0; l < L; ++l) m.emission(i, l) = row[l];
    }
    return m;
  }
  // spread: empirical label frequencies with multiplicative jitter, sticky A.
  std::vector<double> freq(L, 1.0);
  for (std::size_t u = 0; u < obs.user_count(); ++u) {
    for (Label o : obs.row(u)) freq[o] += 1.0;
  }
  for (std::size_t k = 0; k < K; ++k) {
    double s = 0.0;
    for (std::size_t l = 0; l < L; ++l) s += m.emission(k, l) = freq[l] * (0.25 + rng.uniform());
    for (std::size_t l = 0; l < L; ++l) m.emission(k, l) /= s;
    for (std::size_t j = 0; j < K; ++j) {
      m.transition(k, j) = (j == k ? 0.8 : 0.0) + 0.2 / static_cast<double>(K);
    }
  }
  return m;
}

inline void m_step(const Accumulator& acc, std::size_t users, LatentMarkovModel& m) {
  const std::size_t K = acc.K, L = acc.L;
  for (std::size_t k = 0; k < K; ++k) m.initial(k) = acc.initial[k] / static_cast<double>(users);
  for (std::size_t i = 0; i < K; ++i) {
    double den = 0.0;
    for (std::size_t j = 0; j < K; ++j) den += acc.transition[i * K + j];
    if (den > 0.0) {
      for (std::size_t j = 0; j < K; ++j) m.transition(i, j) = acc.transition[i * K + j] / den;
    }
    den = 0.0;
    for (std::size_t l = 0; l < L; ++l) den += acc.emission[i * L + l];
    if (den > 0.0) {
      for (std::size_t l = 0; l < L; ++l) m.emission(i, l) = acc.emission[i * L + l] / den;
    }
  }
}

inline std::size_t distinct_sequences(const ObservationMatrix& obs) {
  std::set<std::vector<Label>> seen;
  for (std::size_t u = 0; u < obs.user_count(); ++u) seen.emplace(obs.row(u).begin(), obs.row(u).end());
  return seen.size();
}

// One EM run from `model`; returns the per-iteration loglik trace.
inline std::vector<double> run_em(const ObservationMatrix& obs, LatentMarkovModel& model, const EmConfig& cfg,
                                  bool& converged) {
  std::vector<double> trace;
  std::vector<double> a, s;
  converged = false;
  for (std::size_t it = 0; it < cfg.max_iter; ++it) {
    Accumulator acc(model.states(), model.labels());
    double ll = 0.0;
    for (std::size_t u = 0; u < obs.user_count(); ++u) ll += accumulate(model, obs.row(u), &acc, a, s);
    trace.push_back(ll);
    if (it > 0 && ll - trace[it - 1] < cfg.tol) {
      converged = true;
      break;
    }
    if (it + 1 == cfg.max_iter) break;
    m_step(acc, obs.user_count(), model);
  }
  return trace;
}

}  // namespace detail

// Maximum-likelihood fit by EM (Baum-Welch) with seeded restarts; the restart
// with the highest final log-likelihood wins (lowest restart index on ties).
inline FitResult em_fit(const ObservationMatrix& obs, std::size_t states, const EmConfig& cfg = {}) {
  if (states < 1) throw ValidationError("em_fit: state count must be at least 1");
  if (obs.user_count() == 0 || obs.periods() == 0) throw ValidationError("em_fit: empty observation matrix");
  if (cfg.restarts < 1 || cfg.max_iter < 1) throw ValidationError("em_fit: restarts and max_iter must be positive");
  FitResult best;
  best.seed = cfg.seed;
  best.degenerate = states > detail::distinct_sequences(obs);
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    Rng rng(mix_seed(cfg.seed, r));
    LatentMarkovModel model = detail::initial_model(obs, states, cfg.init, rng);
    bool converged = false;
    auto trace = detail::run_em(obs, model, cfg, converged);
    const double ll = trace.back();
    best.restart_logliks.push_back(ll);
    if (r == 0 || ll > best.loglik) {
      best.model = std::move(model);
      best.loglik = ll;
      best.iterations = trace.size();
      best.converged = converged;
      best.trace = std::move(trace);
    }
  }
  return best;
}

struct InformationCriteria {
  std::size_t parameters = 0;
  double aic = 0.0;
  double bic = 0.0;
};

inline std::size_t free_parameters(std::size_t states, std::size_t labels) {
  return (states - 1) + states * (states - 1) + states * (labels - 1);
}

inline InformationCriteria information_criteria(double loglik, std::size_t states, std::size_t labels,
                                                std::size_t n_users) {
  if (n_users < 1) throw ValidationError("information criteria need at least one user");
  InformationCriteria ic;
  ic.parameters = free_parameters(states, labels);
  const double k = static_cast<double>(ic.parameters);
  ic.aic = 2.0 * k - 2.0 * loglik;
  ic.bic = k * std::log(static_cast<double>(n_users)) - 2.0 * loglik;
  return ic;
}

inline InformationCriteria information_criteria(const FitResult& fit, std::size_t n_users) {
  return information_criteria(fit.loglik, fit.model.states(), fit.model.labels(), n_users);
}

// Decoded latent path of one user. States are stored 0-based; serialized
// files use 1-based state numbers.
struct StateTrajectory {
  std::string user_id;
  std::vector<State> states;
};

// Joint MAP state path. At every step the lowest-index state wins ties.
inline std::vector<State> viterbi(const LatentMarkovModel& model, std::span<const Label> seq) {
  detail::check_sequence(model, seq);
  const std::size_t K = model.states(), T = seq.size();
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  std::vector<double> logA(K * K);
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = 0; j < K; ++j) logA[i * K + j] = detail::log_or_ninf(model.transition(i, j));
  }
  std::vector<double> delta(K), next(K);
  std::vector<State> back(T * K, 0);
  auto impossible = [](std::size_t t) {
    return Error("viterbi: every state path has zero probability at step " + std::to_string(t + 1));
  };
  bool any = false;
  for (std::size_t k = 0; k < K; ++k) {
    delta[k] = detail::log_or_ninf(model.initial(k)) + detail::log_or_ninf(model.emission(k, seq[0]));
    any = any || delta[k] > kNegInf;
  }
  if (!any) throw impossible(0);
  for (std::size_t t = 1; t < T; ++t) {
    any = false;
    for (std::size_t j = 0; j < K; ++j) {
      double best = kNegInf;
      State arg = 0;
      for (std::size_t i = 0; i < K; ++i) {
        const double v = delta[i] + logA[i * K + j];
        if (v > best) {
          best = v;
          arg = static_cast<State>(i);
        }
      }
      back[t * K + j] = arg;
      next[j] = best + detail::log_or_ninf(model.emission(j, seq[t]));
      any = any || next[j] > kNegInf;
    }
    if (!any) throw impossible(t);
    delta.swap(next);
  }
  std::vector<State> path(T);
  State last = 0;
  for (std::size_t k = 1; k < K; ++k) {
    if (delta[k] > delta[last]) last = static_cast<State>(k);
  }
  path[T - 1] = last;
  for (std::size_t t = T - 1; t > 0; --t) path[t - 1] = back[t * K + path[t]];
  return path;
}

// Log joint probability of a state path and observation sequence.
inline double path_log_probability(const LatentMarkovModel& model, std::span<const State> path,
                                   std::span<const Label> seq) {
  double lp = detail::log_or_ninf(model.initial(path[0])) + detail::log_or_ninf(model.emission(path[0], seq[0]));
  for (std::size_t t = 1; t < seq.size(); ++t) {
    lp += detail::log_or_ninf(model.transition(path[t - 1], path[t])) +
          detail::log_or_ninf(model.emission(path[t], seq[t]));
  }
  return lp;
}

// Per-period argmax of the marginal state posterior (lowest index on ties).
inline std::vector<State> posterior_decode(const LatentMarkovModel& model, std::span<const Label> seq) {
  detail::check_sequence(model, seq);
  const std::size_t K = model.states(), T = seq.size();
  std::vector<State> path(T);
  std::vector<double> la(T * K), lb(T * K, 0.0), tmp(K);
  for (std::size_t k = 0; k < K; ++k) {
    la[k] = detail::log_or_ninf(model.initial(k)) + detail::log_or_ninf(model.emission(k, seq[0]));
  }
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t j = 0; j < K; ++j) {
      for (std::size_t i = 0; i < K; ++i) tmp[i] = la[(t - 1) * K + i] + detail::log_or_ninf(model.transition(i, j));
      la[t * K + j] = detail::log_sum_exp(tmp) + detail::log_or_ninf(model.emission(j, seq[t]));
    }
  }
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t i = 0; i < K; ++i) {
      for (std::size_t j = 0; j < K; ++j) {
        tmp[j] = detail::log_or_ninf(model.transition(i, j)) + detail::log_or_ninf(model.emission(j, seq[t + 1])) +
                 lb[(t + 1) * K + j];
      }
      lb[t * K + i] = detail::log_sum_exp(tmp);
    }
  }
  if (detail::log_sum_exp(std::span<const double>(la.data() + (T - 1) * K, K)) ==
      -std::numeric_limits<double>::infinity()) {
    throw Error("posterior decoding: sequence has zero probability under the model");
  }
  for (std::size_t t = 0; t < T; ++t) {
    State arg = 0;
    for (std::size_t k = 1; k < K; ++k) {
      if (la[t * K + k] + lb[t * K + k] > la[t * K + arg] + lb[t * K + arg]) arg = static_cast<State>(k);
    }
    path[t] = arg;
  }
  return path;
}

enum class DecodeMethod { viterbi, posterior };

inline DecodeMethod parse_decode_method(std::string_view s) {
  if (s == "viterbi") return DecodeMethod::viterbi;
  if (s == "posterior") return DecodeMethod::posterior;
  throw ValidationError("unknown decode method '" + std::string(s) + "' (expected viterbi or posterior)");
}

inline std::vector<StateTrajectory> decode(const LatentMarkovModel& model, const ObservationMatrix& obs,
                                           DecodeMethod method = DecodeMethod::viterbi) {
  std::vector<StateTrajectory> out;
  out.reserve(obs.user_count());
  for (std::size_t u = 0; u < obs.user_count(); ++u) {
    out.push_back({obs.users()[u], method == DecodeMethod::viterbi ? viterbi(model, obs.row(u))
                                                                   : posterior_decode(model, obs.row(u))});
  }
  return out;
}

struct SyntheticPanel {
  ObservationMatrix observations;  // one event per cell, labelled with the emission
  std::vector<std::vector<State>> states;
};

// Samples `users` independent sequences of length `periods`: initial state
// from pi, then A-chain transitions with B emissions. Deterministic in seed.
inline SyntheticPanel generate(const LatentMarkovModel& model, std::size_t users, std::size_t periods,
                               std::uint64_t seed) {
  model.validate();
  if (users < 1 || periods < 1) throw ValidationError("generate: users and periods must be positive");
  std::vector<std::string> ids;
  const std::size_t width = std::to_string(users).size();
  for (std::size_t u = 0; u < users; ++u) {
    std::string n = std::to_string(u + 1);
    ids.push_back("u" + std::string(width - n.size(), '0') + n);
  }
  SyntheticPanel panel{ObservationMatrix(std::move(ids), periods, model.labels()), {}};
  panel.states.assign(users, std::vector<State>(periods));
  Rng rng(seed);
  for (std::size_t u = 0; u < users; ++u) {
    std::size_t k = rng.categorical(model.initial_row());
    for (std::size_t p = 0; p < periods; ++p) {
      if (p > 0) k = rng.categorical(model.transition_row(k));
      const auto l = static_cast<Label>(rng.categorical(model.emission_row(k)));
      panel.states[u][p] = static_cast<State>(k);
      panel.observations.obs(u, p) = l;
      panel.observations.count(u, p, l) = 1;
    }
  }
  return panel;
}

struct Alignment {
  std::vector<std::size_t> permutation;  // fitted state permutation[k] matches reference state k
  LatentMarkovModel aligned;             // fitted model with states reordered to match the reference
  double max_abs_transition = 0.0;
  double max_abs_emission = 0.0;
};

// Reorders the fitted model's states to minimise the total L1 distance between
// matched emission rows (exhaustive search over all K! orderings).
inline Alignment align_states(const LatentMarkovModel& fitted, const LatentMarkovModel& reference) {
  const std::size_t K = fitted.states();
  if (K != reference.states() || fitted.labels() != reference.labels()) {
    throw ValidationError("align_states: models differ in shape");
  }
  if (K > 12) throw ValidationError("align_states: exhaustive alignment supports at most 12 states");
  std::vector<std::size_t> perm(K);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::size_t> best_perm = perm;
  double best = std::numeric_limits<double>::infinity();
  do {
    double d = 0.0;
    for (std::size_t k = 0; k < K && d < best; ++k) {
      for (std::size_t l = 0; l < fitted.labels(); ++l) d += std::abs(fitted.emission(perm[k], l) - reference.emission(k, l));
    }
    if (d < best) {
      best = d;
      best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  Alignment out;
  out.permutation = best_perm;
  out.aligned = LatentMarkovModel(K, fitted.labels());
  for (std::size_t k = 0; k < K; ++k) {
    out.aligned.initial(k) = fitted.initial(best_perm[k]);
    for (std::size_t j = 0; j < K; ++j) out.aligned.transition(k, j) = fitted.transition(best_perm[k], best_perm[j]);
    for (std::size_t l = 0; l < fitted.labels(); ++l) out.aligned.emission(k, l) = fitted.emission(best_perm[k], l);
  }
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = 0; j < K; ++j) {
      out.max_abs_transition =
          std::max(out.max_abs_transition, std::abs(out.aligned.transition(i, j) - reference.transition(i, j)));
    }
    for (std::size_t l = 0; l < fitted.labels(); ++l) {
      out.max_abs_emission =
          std::max(out.max_abs_emission, std::abs(out.aligned.emission(i, l) - reference.emission(i, l)));
    }
  }
  return out;
}

// --- serialization ---------------------------------------------------------

inline nlohmann::json model_to_json(const LatentMarkovModel& m, std::uint64_t seed, double loglik) {
  nlohmann::json j;
  j["K"] = m.states();
  j["L"] = m.labels();
  j["pi"] = std::vector<double>(m.initial_row().begin(), m.initial_row().end());
  nlohmann::json a = nlohmann::json::array(), b = nlohmann::json::array();
  for (std::size_t k = 0; k < m.states(); ++k) {
    a.push_back(std::vector<double>(m.transition_row(k).begin(), m.transition_row(k).end()));
    b.push_back(std::vector<double>(m.emission_row(k).begin(), m.emission_row(k).end()));
  }
  j["A"] = a;
  j["B"] = b;
  j["seed"] = seed;
  if (std::isfinite(loglik)) j["loglik"] = loglik;
  else j["loglik"] = nullptr;
  return j;
}

struct StoredModel {
  LatentMarkovModel model;
  std::uint64_t seed = 0;
  double loglik = 0.0;
};

inline StoredModel model_from_json(const nlohmann::json& j) {
  try {
    StoredModel s;
    s.model = LatentMarkovModel(j.at("pi").get<std::vector<double>>(), j.at("A").get<std::vector<std::vector<double>>>(),
                                j.at("B").get<std::vector<std::vector<double>>>());
    if (j.at("K").get<std::size_t>() != s.model.states()) throw ValidationError("model file: K disagrees with pi");
    s.seed = j.value("seed", std::uint64_t{0});
    s.loglik = j.at("loglik").is_null() ? -std::numeric_limits<double>::infinity() : j.at("loglik").get<double>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model file: ") + e.what());
  }
}

inline std::string trajectories_to_csv(const std::vector<StateTrajectory>& trajs) {
  csv::Writer w;
  const std::size_t P = trajs.empty() ? 0 : trajs.front().states.size();
  std::vector<std::string> header{"user_id"};
  for (std::size_t p = 0; p < P; ++p) header.push_back("p" + std::to_string(p + 1));
  w.row(header);
  for (const auto& t : trajs) {
    std::vector<std::string> r{t.user_id};
    for (State s : t.states) r.push_back(std::to_string(s + 1));
    w.row(r);
  }
  return w.str();
}

inline std::vector<StateTrajectory> trajectories_from_csv(std::string_view text) {
  const auto t = csv::parse_table(text, "trajectories");
  std::vector<StateTrajectory> out;
  for (const auto& r : t.rows) {
    StateTrajectory s{r[0], {}};
    for (std::size_t p = 1; p < r.size(); ++p) {
      const auto v = parse_int(r[p], "state");
      if (v < 1 || v > 64) throw ValidationError("trajectories: state out of range");
      s.states.push_back(static_cast<State>(v - 1));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace trajektor
