#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/oracles.hpp"
#include "trajektor/lmm.hpp"

using namespace trajektor;

namespace {

std::vector<Label> random_sequence(std::mt19937_64& rng, std::size_t T, std::size_t L) {
  std::vector<Label> s(T);
  for (auto& x : s) x = static_cast<Label>(rng() % L);
  return s;
}

ObservationMatrix random_obs(std::mt19937_64& rng, std::size_t U, std::size_t P, std::size_t L) {
  std::vector<std::string> ids;
  for (std::size_t u = 0; u < U; ++u) ids.push_back("u" + std::to_string(u));
  ObservationMatrix m(ids, P, L);
  for (std::size_t u = 0; u < U; ++u) {
    for (std::size_t p = 0; p < P; ++p) {
      m.obs(u, p) = static_cast<Label>(rng() % L);
      m.count(u, p, m.obs(u, p)) = 1;
    }
  }
  return m;
}

}  // namespace

TEST(LogLikelihood, SingleStateProduct) {
  const LatentMarkovModel m({1.0}, {{1.0}}, {{0.5, 0.3, 0.2}});
  const std::vector<Label> seq{0, 0};
  EXPECT_NEAR(log_likelihood(m, seq), std::log(0.25), 1e-15);
}

TEST(LogLikelihood, DeterministicModel) {
  const LatentMarkovModel m({1.0, 0.0}, {{1.0, 0.0}, {0.0, 1.0}}, {{1.0, 0.0}, {0.0, 1.0}});
  const std::vector<Label> ok{0, 0, 0};
  EXPECT_EQ(log_likelihood(m, ok), 0.0);
  const std::vector<Label> impossible{0, 1};
  EXPECT_EQ(log_likelihood(m, impossible), -std::numeric_limits<double>::infinity());
}

TEST(LogLikelihood, MatchesPathEnumeration) {
  std::mt19937_64 rng(42);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t K = 1 + rng() % 3, T = 1 + rng() % 6;
    const auto m = oracle::random_model(rng, K, 3);
    const auto seq = random_sequence(rng, T, 3);
    EXPECT_NEAR(log_likelihood(m, seq), oracle::brute_force_loglik(m, seq), 1e-9);
  }
}

TEST(LogLikelihood, LongSequencesDoNotUnderflow) {
  std::mt19937_64 rng(1);
  const auto m = oracle::random_model(rng, 3, 3);
  const auto seq = random_sequence(rng, 5000, 3);
  const double ll = log_likelihood(m, seq);
  EXPECT_TRUE(std::isfinite(ll));
  // Log-space route agrees with the scaled route.
  EXPECT_NEAR(detail::accumulate_logspace(m, seq, nullptr), ll, 1e-8 * std::abs(ll));
}

TEST(LogLikelihood, LogSpaceFallbackMatchesScaledExpectations) {
  std::mt19937_64 rng(8);
  const auto m = oracle::random_model(rng, 3, 3);
  const auto seq = random_sequence(rng, 30, 3);
  detail::Accumulator a(3, 3), b(3, 3);
  std::vector<double> x, z;
  detail::accumulate(m, seq, &a, x, z);
  detail::accumulate_logspace(m, seq, &b);
  for (std::size_t i = 0; i < a.transition.size(); ++i) EXPECT_NEAR(a.transition[i], b.transition[i], 1e-10);
  for (std::size_t i = 0; i < a.emission.size(); ++i) EXPECT_NEAR(a.emission[i], b.emission[i], 1e-10);
  for (std::size_t i = 0; i < a.initial.size(); ++i) EXPECT_NEAR(a.initial[i], b.initial[i], 1e-12);
}

TEST(EmFit, SingleStateIsEmpiricalFrequency) {
  std::mt19937_64 rng(3);
  const auto obs = random_obs(rng, 40, 12, 3);
  std::vector<double> freq(3, 0.0);
  for (std::size_t u = 0; u < obs.user_count(); ++u) {
    for (Label o : obs.row(u)) freq[o] += 1.0;
  }
  const auto fit = em_fit(obs, 1, {.restarts = 2, .seed = 5});
  for (std::size_t l = 0; l < 3; ++l) EXPECT_NEAR(fit.model.emission(0, l), freq[l] / (40.0 * 12.0), 1e-12);
  EXPECT_DOUBLE_EQ(fit.model.transition(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(fit.model.initial(0), 1.0);
}

TEST(EmFit, MonotoneValidAndConsistent) {
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 6; ++rep) {
    const auto obs = random_obs(rng, 60, 15, 3);
    const std::size_t K = 2 + rep % 3;
    for (auto init : {EmConfig::Init::random, EmConfig::Init::spread}) {
      const auto fit = em_fit(obs, K, {.restarts = 3, .max_iter = 80, .seed = static_cast<std::uint64_t>(rep), .init = init});
      for (std::size_t i = 1; i < fit.trace.size(); ++i) EXPECT_GE(fit.trace[i] - fit.trace[i - 1], -1e-8);
      EXPECT_TRUE(fit.model.is_valid());
      EXPECT_NEAR(fit.loglik, log_likelihood(fit.model, obs), 1e-6);
      EXPECT_EQ(fit.loglik, *std::max_element(fit.restart_logliks.begin(), fit.restart_logliks.end()));
    }
  }
}

TEST(EmFit, DeterministicGivenSeed) {
  std::mt19937_64 rng(2);
  const auto obs = random_obs(rng, 30, 10, 3);
  const auto a = em_fit(obs, 3, {.restarts = 3, .seed = 99});
  const auto b = em_fit(obs, 3, {.restarts = 3, .seed = 99});
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.trace, b.trace);
}

TEST(EmFit, DegenerateFlagAndPreconditions) {
  std::vector<std::string> ids{"a", "b"};
  ObservationMatrix m(ids, 3, 3);
  const auto fit = em_fit(m, 2, {.restarts = 1, .max_iter = 5});
  EXPECT_TRUE(fit.degenerate);  // both rows identical -> one distinct sequence
  EXPECT_THROW(em_fit(m, 0), ValidationError);
  EXPECT_THROW(em_fit(ObservationMatrix({}, 3, 3), 2), ValidationError);
}

TEST(InformationCriteria, Formula) {
  const auto ic = information_criteria(-10.0, 1, 3, 50);
  EXPECT_EQ(ic.parameters, 2u);
  EXPECT_DOUBLE_EQ(ic.aic, 24.0);
  EXPECT_DOUBLE_EQ(ic.bic, 2.0 * std::log(50.0) + 20.0);
  EXPECT_EQ(free_parameters(3, 3), 14u);
  EXPECT_THROW(information_criteria(-1.0, 2, 3, 0), ValidationError);
}

TEST(Viterbi, TrivialCases) {
  const LatentMarkovModel one({1.0}, {{1.0}}, {{0.2, 0.3, 0.5}});
  const std::vector<Label> seq{2, 0, 1, 1};
  EXPECT_EQ(viterbi(one, seq), (std::vector<State>{0, 0, 0, 0}));

  const LatentMarkovModel ident({0.3, 0.3, 0.4}, {{0.5, 0.25, 0.25}, {0.25, 0.5, 0.25}, {0.25, 0.25, 0.5}},
                                {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const std::vector<Label> obs{2, 0, 0, 1, 2, 1};
  const auto path = viterbi(ident, obs);
  for (std::size_t t = 0; t < obs.size(); ++t) EXPECT_EQ(path[t], obs[t]);
}

TEST(Viterbi, MatchesExhaustiveArgmax) {
  std::mt19937_64 rng(123);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t K = 1 + rng() % 3, T = 1 + rng() % 6;
    const auto m = oracle::random_model(rng, K, 3);
    const auto seq = random_sequence(rng, T, 3);
    const auto path = viterbi(m, seq);
    EXPECT_NEAR(path_log_probability(m, path, seq), std::log(oracle::brute_force_max_path(m, seq)), 1e-9);
  }
}

TEST(Viterbi, TiesPreferLowestState) {
  const LatentMarkovModel sym({0.5, 0.5}, {{0.5, 0.5}, {0.5, 0.5}}, {{0.5, 0.5}, {0.5, 0.5}});
  const std::vector<Label> seq{0, 1, 1, 0};
  EXPECT_EQ(viterbi(sym, seq), (std::vector<State>{0, 0, 0, 0}));
}

TEST(Viterbi, ImpossibleSequenceNamesStep) {
  const LatentMarkovModel m({1.0, 0.0}, {{1.0, 0.0}, {0.0, 1.0}}, {{1.0, 0.0}, {0.0, 1.0}});
  const std::vector<Label> seq{0, 0, 1};
  try {
    viterbi(m, seq);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("step 3"), std::string::npos);
  }
}

TEST(PosteriorDecode, MatchesEnumeratedMarginals) {
  std::mt19937_64 rng(77);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t K = 2 + rng() % 2, T = 2 + rng() % 4;
    const auto m = oracle::random_model(rng, K, 3);
    const auto seq = random_sequence(rng, T, 3);
    std::vector<double> marg(T * K, 0.0);
    oracle::for_each_path(K, T, [&](const std::vector<State>& path) {
      const double p = oracle::joint_probability(m, path, seq);
      for (std::size_t t = 0; t < T; ++t) marg[t * K + path[t]] += p;
    });
    const auto dec = posterior_decode(m, seq);
    for (std::size_t t = 0; t < T; ++t) {
      double best = 0.0;
      for (std::size_t k = 0; k < K; ++k) best = std::max(best, marg[t * K + k]);
      EXPECT_NEAR(marg[t * K + dec[t]], best, 1e-12 * best + 1e-300);
    }
  }
}

TEST(Generate, DeterministicModelGivesConstantSequences) {
  const LatentMarkovModel m({0.0, 1.0}, {{1.0, 0.0}, {0.0, 1.0}}, {{1.0, 0.0, 0.0}, {0.0, 0.0, 1.0}});
  const auto panel = generate(m, 5, 8, 1);
  for (std::size_t u = 0; u < 5; ++u) {
    for (std::size_t p = 0; p < 8; ++p) {
      EXPECT_EQ(panel.observations.obs(u, p), 2);
      EXPECT_EQ(panel.states[u][p], 1);
    }
  }
}

TEST(Generate, SameSeedIsBitIdentical) {
  const auto m = reference_model();
  const auto a = generate(m, 50, 20, 9);
  const auto b = generate(m, 50, 20, 9);
  EXPECT_EQ(a.observations, b.observations);
  EXPECT_EQ(a.states, b.states);
  EXPECT_FALSE(a.observations == generate(m, 50, 20, 10).observations);
}

TEST(Generate, PooledFrequenciesMatchStationaryMixture) {
  auto m = reference_model();
  const auto pi = oracle::stationary(m);
  m = LatentMarkovModel(pi, {{0.99, 0.01, 0.00}, {0.03, 0.96, 0.01}, {0.02, 0.03, 0.95}},
                        {{0.95, 0.03, 0.02}, {0.45 / 0.99, 0.32 / 0.99, 0.22 / 0.99}, {0.06, 0.13, 0.81}});
  const auto panel = generate(m, 10000, 100, 2024);
  std::vector<double> freq(3, 0.0);
  for (std::size_t u = 0; u < 10000; ++u) {
    for (Label o : panel.observations.row(u)) freq[o] += 1.0;
  }
  for (std::size_t l = 0; l < 3; ++l) {
    double expected = 0.0;
    for (std::size_t k = 0; k < 3; ++k) expected += pi[k] * m.emission(k, l);
    EXPECT_NEAR(freq[l] / 1e6, expected, 0.01);
  }
}

TEST(AlignStates, RecoversPermutation) {
  const auto ref = reference_model();
  // Swap states 0 and 2.
  const std::vector<std::size_t> perm{2, 1, 0};
  LatentMarkovModel shuffled(3, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    shuffled.initial(perm[i]) = ref.initial(i);
    for (std::size_t j = 0; j < 3; ++j) shuffled.transition(perm[i], perm[j]) = ref.transition(i, j);
    for (std::size_t l = 0; l < 3; ++l) shuffled.emission(perm[i], l) = ref.emission(i, l);
  }
  const auto al = align_states(shuffled, ref);
  EXPECT_EQ(al.permutation, perm);
  EXPECT_EQ(al.max_abs_emission, 0.0);
  EXPECT_EQ(al.max_abs_transition, 0.0);
}

TEST(ModelJson, ExactRoundTrip) {
  std::mt19937_64 rng(4);
  const auto m = oracle::random_model(rng, 4, 3);
  const auto text = model_to_json(m, 77, -1234.5678901234567).dump();
  const auto back = model_from_json(nlohmann::json::parse(text));
  EXPECT_EQ(back.model, m);
  EXPECT_EQ(back.seed, 77u);
  EXPECT_EQ(back.loglik, -1234.5678901234567);
}

TEST(ReferenceModel, RowsAreDistributions) {
  const auto m = reference_model();
  EXPECT_TRUE(m.is_valid(1e-12));
  EXPECT_DOUBLE_EQ(m.emission(2, 2), 0.81);
  EXPECT_DOUBLE_EQ(m.transition(0, 0), 0.99);
  EXPECT_DOUBLE_EQ(m.transition(1, 1), 0.96);
  EXPECT_DOUBLE_EQ(m.transition(2, 2), 0.95);
}
