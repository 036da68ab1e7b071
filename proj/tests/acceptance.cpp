// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>

#include "support/oracles.hpp"
#include "support/planted.hpp"
#include "trajektor/pipeline.hpp"
#include "trajektor/synth.hpp"

namespace fs = std::filesystem;
using namespace trajektor;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// The recovery corpus is shared by criteria 1 and 4.
const ObservationMatrix& recovery_corpus() {
  static const ObservationMatrix obs = generate(reference_model(), 3000, 100, 20240601).observations;
  return obs;
}

Outcome recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto fit = em_fit(recovery_corpus(), 3, {.restarts = 10, .seed = 1});
  const double secs = seconds_since(t0);
  const auto al = align_states(fit.model, reference_model());
  const bool ok = al.max_abs_transition <= 0.05 && al.max_abs_emission <= 0.05 && secs < 60.0;
  return {ok, fmt("max|dA| = %.4f, max|dB| = %.4f, %.1f s", al.max_abs_transition, al.max_abs_emission, secs)};
}

Outcome monotonicity() {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  std::size_t steps = 0;
  for (int d = 0; d < 20; ++d) {
    const std::size_t K = 2 + static_cast<std::size_t>(d % 3);
    const auto truth = oracle::random_model(rng, K, 3);
    const auto obs = generate(truth, 200, 20, 1000 + static_cast<std::uint64_t>(d)).observations;
    for (std::uint64_t r = 0; r < 3; ++r) {
      const auto fit = em_fit(obs, K, {.restarts = 1, .seed = 50 * static_cast<std::uint64_t>(d) + r});
      for (std::size_t i = 1; i < fit.trace.size(); ++i, ++steps) worst = std::max(worst, fit.trace[i - 1] - fit.trace[i]);
    }
  }
  return {worst <= 1e-8, fmt("largest loglik drop %.3g over %zu EM steps", worst, steps)};
}

Outcome enumeration() {
  std::mt19937_64 rng(3);
  double ll_err = 0.0, path_err = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t K = 1 + rng() % 3, T = 1 + rng() % 6;
    const auto m = oracle::random_model(rng, K, 3);
    std::vector<Label> seq(T);
    for (auto& l : seq) l = static_cast<Label>(rng() % 3);
    ll_err = std::max(ll_err, std::abs(log_likelihood(m, seq) - oracle::brute_force_loglik(m, seq)));
    const auto path = viterbi(m, seq);
    path_err = std::max(path_err,
                        std::abs(path_log_probability(m, path, seq) - std::log(oracle::brute_force_max_path(m, seq))));
  }
  return {ll_err <= 1e-9 && path_err <= 1e-9, fmt("max loglik error %.2g, max Viterbi path error %.2g", ll_err, path_err)};
}

Outcome bic_selection() {
  const auto& obs = recovery_corpus();
  std::size_t best_k = 0;
  double best = std::numeric_limits<double>::infinity();
  std::string trail;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t K = 1; K <= 6; ++K) {
    const auto fit = em_fit(obs, K, {.restarts = 10, .seed = 1});
    const double bic = information_criteria(fit, obs.user_count()).bic;
    trail += fmt("%sK=%zu:%.1f", K > 1 ? " " : "", K, bic);
    if (bic < best) {
      best = bic;
      best_k = K;
    }
  }
  return {best_k == 3, fmt("argmin K = %zu (%s) in %.1f s", best_k, trail.c_str(), seconds_since(t0))};
}

Outcome archetypes() {
  const auto corpus = planted::five_archetypes(100, 0.1, 5);
  const auto c = kmodes_fit(corpus.data, 5, {.restarts = 10, .seed = 1});
  const double ari = oracle::adjusted_rand_index(c.assignment, corpus.truth);
  const auto curve = wss_curve(corpus.data, 2, 20, {.restarts = 10, .seed = 1});
  const auto e = elbow(curve);
  return {ari > 0.95 && e >= 5 && e <= 8, fmt("ARI %.4f at k = 5, elbow k = %zu", ari, e)};
}

Outcome gini_and_tscore() {
  std::mt19937_64 rng(11);
  double gerr = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    std::vector<double> x(1 + rng() % 300);
    for (auto& v : x) v = static_cast<double>(rng() % 5000) / 7.0;
    x[0] += 1.0;
    gerr = std::max(gerr, std::abs(gini(x) - oracle::pairwise_gini(x)));
  }
  const double g4 = gini(std::vector<double>{1, 2, 3, 4});

  double terr = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<std::string> ids;
    for (int u = 0; u < 60; ++u) ids.push_back("u" + std::to_string(u));
    ObservationMatrix m(ids, 10, 3);
    std::vector<std::string> group(60);
    for (std::size_t u = 0; u < 60; ++u) {
      group[u] = "g" + std::to_string(u < 4 ? u : rng() % 4);
      for (std::size_t p = 0; p < 10; ++p) {
        for (std::size_t l = 0; l < 3; ++l) m.count(u, p, l) = rng() % 3 == 0 ? static_cast<std::uint32_t>(rng() % 7) : 0;
      }
    }
    const auto s = tscore(m, group, {"g0", "g1", "g2", "g3"});
    for (std::size_t p = 0; p < s.periods; ++p) {
      for (std::size_t l = 0; l < s.labels; ++l) {
        if (!(s.mu(p, l) > 0.0)) continue;
        double acc = 0.0;
        for (std::size_t g = 0; g < s.groups.size(); ++g) {
          acc += static_cast<double>(s.group_users[g]) / static_cast<double>(s.cohort_users) * s.value(g, p, l).value_or(0.0);
        }
        terr = std::max(terr, std::abs(acc - 100.0));
      }
    }
  }
  return {gerr <= 1e-12 && terr <= 1e-9 && g4 == 0.25,
          fmt("gini oracle error %.2g, TScore identity error %.2g, gini(1,2,3,4) = %.17g", gerr, terr, g4)};
}

Outcome rank_tests() {
  std::mt19937_64 rng(13);
  double werr = 0.0;
  for (std::size_t m = 1; m < 10; ++m) {
    for (std::size_t n = 1; m + n <= 10; ++n) {
      std::vector<double> pool(m + n);
      std::iota(pool.begin(), pool.end(), 1.0);
      for (int rep = 0; rep < 10; ++rep) {
        std::shuffle(pool.begin(), pool.end(), rng);
        const std::vector<double> x(pool.begin(), pool.begin() + static_cast<long>(m));
        const std::vector<double> y(pool.begin() + static_cast<long>(m), pool.end());
        double rx = 0.0;
        for (double v : x) rx += v;
        werr = std::max(werr, std::abs(stats::rank_sum(x, y, stats::RankSumMethod::exact).p_value -
                                       oracle::enumerated_rank_sum_p(m, n, rx)));
      }
    }
  }
  const double h = stats::kruskal_wallis({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}}).statistic;

  std::normal_distribution<double> z;
  std::size_t rejected = 0;
  const std::size_t sims = 10000;
  for (std::size_t i = 0; i < sims; ++i) {
    std::vector<double> x(15), y(20);
    for (auto& v : x) v = z(rng);
    for (auto& v : y) v = z(rng);
    if (stats::rank_sum(x, y).p_value < 0.05) ++rejected;
  }
  const double rate = static_cast<double>(rejected) / static_cast<double>(sims);
  return {werr <= 1e-12 && std::abs(h - 7.2) <= 1e-12 && rate >= 0.03 && rate <= 0.07,
          fmt("exact rank-sum error %.2g, KW H = %.12g, null rejection rate %.4f", werr, h, rate)};
}

struct RunDirs {
  fs::path root;
  fs::path config;
};

// Writes the planted-typology corpus and a config for it.
RunDirs typology_run() {
  RunDirs d{fs::temp_directory_path() / "trajektor_acceptance", {}};
  fs::remove_all(d.root);
  fs::create_directories(d.root);
  synth::TypologyConfig tc;
  tc.users = 2000;
  tc.seed = 7;
  auto corpus = synth::generate_typology(tc);
  csv::write_file((d.root / "events.csv").string(),
                  serialize_events(EventSet::build(std::move(corpus.events), corpus.span), EventFormat::csv));
  d.config = d.root / "run.conf";
  csv::write_file(d.config.string(), "input = events.csv\nspan-start = " + std::to_string(tc.span.start) +
                                         "\nspan-end = " + std::to_string(tc.span.end) + "\n");
  return d;
}

Outcome figure_shares(const RunDirs& d) {
  auto settings = pipeline::load_config(d.config);
  settings.set("seed", "1");
  std::string err;
  if (pipeline::cmd_run(settings, d.root / "run1", {}, &err) != pipeline::kSuccess) return {false, "run failed: " + err};
  const auto types = types_from_csv(csv::read_file((d.root / "run1" / "types.csv").string()));
  std::map<UserType, double> n;
  for (const auto& u : types.users) n[u.type] += 1.0;
  const std::array<double, 7> target{28.9, 14.0, 27.0, 9.2, 8.8, 4.8, 7.4};
  double worst = 0.0;
  std::string trail;
  for (std::size_t t = 0; t < target.size(); ++t) {
    const double share = 100.0 * n[kAllUserTypes[t]] / static_cast<double>(types.users.size());
    worst = std::max(worst, std::abs(share - target[t]));
    trail += fmt("%s%s %.1f", t ? ", " : "", std::string(type_name(kAllUserTypes[t])).c_str(), share);
  }
  return {worst <= 1.0, fmt("largest share gap %.2f pp (%s)", worst, trail.c_str())};
}

Outcome reproducibility(const RunDirs& d) {
  auto settings = pipeline::load_config(d.config);
  settings.set("seed", "1");
  std::string err;
  if (pipeline::cmd_run(settings, d.root / "run2", {}, &err) != pipeline::kSuccess) return {false, "run failed: " + err};
  std::size_t files = 0;
  std::vector<std::string> names{"manifest.json"};
  for (const auto& st : pipeline::all_stages()) names.insert(names.end(), st.artifacts.begin(), st.artifacts.end());
  for (const auto& f : names) {
    const auto a = d.root / "run1" / f, b = d.root / "run2" / f;
    if (!fs::is_regular_file(a) || !fs::is_regular_file(b)) return {false, "missing " + f};
    if (csv::read_file(a.string()) != csv::read_file(b.string())) return {false, f + " differs"};
    ++files;
  }
  return {true, fmt("%zu files byte-identical across two runs", files)};
}

Outcome filter_and_bins() {
  const auto span = synth::year_span();
  std::vector<EventRecord> ev;
  const auto add = [&](const std::string& id, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) ev.push_back({id, span.start + i % (365 * kSecondsPerDay), 0});
  };
  add("edge", 14600);
  add("over", 14601);
  add("quiet", 37);
  const auto es = EventSet::build(ev, span);
  const auto f = filter_bot_like(es, 40.0);
  const bool edge_kept = std::find(f.removed.begin(), f.removed.end(), "edge") == f.removed.end();
  const bool over_removed = std::find(f.removed.begin(), f.removed.end(), "over") != f.removed.end();

  bool bins_ok = true;
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 200 && bins_ok; ++rep) {
    std::vector<EventRecord> e(1 + rng() % 5000);
    for (auto& r : e) r = {"u" + std::to_string(rng() % 9), static_cast<std::int64_t>(rng() % 100000), 0};
    const auto set = EventSet::build(e, std::nullopt);
    const auto P = static_cast<long long>(1 + rng() % std::min<std::size_t>(e.size(), 400));
    const auto b = build_bins(set, P);
    std::size_t total = 0, lo = SIZE_MAX, hi = 0;
    for (std::size_t p = 0; p < b.periods; ++p) {
      total += b.window_size(p);
      lo = std::min(lo, b.window_size(p));
      hi = std::max(hi, b.window_size(p));
    }
    bins_ok = total == e.size() && hi - lo <= 1 && b.periods == static_cast<std::size_t>(P);
  }
  return {edge_kept && over_removed && bins_ok,
          fmt("14600 kept: %s, 14601 removed: %s, bin sizes sum to N and differ by <= 1: %s", edge_kept ? "yes" : "no",
              over_removed ? "yes" : "no", bins_ok ? "yes" : "no")};
}

}  // namespace

int main() {
  int failures = 0;
  const auto report = [&](int n, const char* what, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", n, what, o.detail.c_str());
    std::fflush(stdout);
  };
  report(1, "EM parameter recovery", recovery);
  report(2, "EM monotonicity", monotonicity);
  report(3, "forward and Viterbi vs enumeration", enumeration);
  report(4, "BIC selects K = 3", bic_selection);
  report(5, "k-modes archetypes and elbow", archetypes);
  report(6, "Gini and TScore identities", gini_and_tscore);
  report(7, "rank tests", rank_tests);
  const auto dirs = typology_run();
  report(8, "type shares through the pipeline", [&] { return figure_shares(dirs); });
  report(9, "byte-identical reruns", [&] { return reproducibility(dirs); });
  report(10, "bot filter boundary and equal-event bins", filter_and_bins);
  std::error_code ec;
  fs::remove_all(dirs.root, ec);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
