// Plants a panel from the three-state reference model, fits it back with EM
// and prints the aligned estimates next to the truth, followed by the BIC
// sweep over K = 1..4.
//
//   recover_reference [users] [periods] [seed]

#include <cstdio>
#include <cstdlib>

#include "trajektor/lmm.hpp"

using namespace trajektor;

namespace {

void print_matrix(const char* title, const LatentMarkovModel& fit, const LatentMarkovModel& ref, bool transition) {
  std::printf("%s (fitted / reference)\n", title);
  const std::size_t cols = transition ? fit.states() : fit.labels();
  for (std::size_t i = 0; i < fit.states(); ++i) {
    std::printf("  ");
    for (std::size_t j = 0; j < cols; ++j) {
      const double a = transition ? fit.transition(i, j) : fit.emission(i, j);
      const double b = transition ? ref.transition(i, j) : ref.emission(i, j);
      std::printf("  %.3f/%.3f", a, b);
    }
    std::printf("\n");
  }
}

}  // namespace

int main(int argc, char** argv) {
  const std::size_t users = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 1000;
  const std::size_t periods = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 100;
  const std::uint64_t seed = argc > 3 ? std::strtoull(argv[3], nullptr, 10) : 1;

  try {
    const auto ref = reference_model();
    const auto panel = generate(ref, users, periods, seed);
    const auto fit = em_fit(panel.observations, 3, {.seed = seed});
    const auto al = align_states(fit.model, ref);
    std::printf("K=3 loglik %.3f after %zu iterations (%s)\n", fit.loglik, fit.iterations,
                fit.converged ? "converged" : "iteration cap");
    print_matrix("transition", al.aligned, ref, true);
    print_matrix("emission", al.aligned, ref, false);
    std::printf("max |dA| = %.4f, max |dB| = %.4f\n\n", al.max_abs_transition, al.max_abs_emission);

    std::printf("K   loglik          BIC\n");
    for (std::size_t K = 1; K <= 4; ++K) {
      const auto f = K == 3 ? fit : em_fit(panel.observations, K, {.seed = seed});
      std::printf("%zu   %-14.3f  %.3f\n", K, f.loglik, information_criteria(f, users).bic);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
