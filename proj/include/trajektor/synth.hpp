#pragma once

#include <array>
#include <string>
#include <vector>

#include "trajektor/corpus.hpp"
#include "trajektor/lmm.hpp"
#include "trajektor/rng.hpp"
#include "trajektor/types.hpp"

namespace trajektor::synth {

inline constexpr std::int64_t kDefaultStart = 1577836800;  // 2020-01-01T00:00:00Z
inline constexpr std::int64_t kDefaultDays = 365;

inline ObservationSpan year_span(std::int64_t start = kDefaultStart, std::int64_t days = kDefaultDays) {
  return {start, start + days * kSecondsPerDay};
}

inline std::string padded_id(const std::string& prefix, std::size_t i, std::size_t total) {
  const std::string n = std::to_string(i + 1);
  const std::size_t width = std::to_string(total).size();
  return prefix + std::string(width - n.size(), '0') + n;
}

// Turns a panel into an event stream. Period p occupies slot p of the span and
// each count becomes that many events stamped at the slot start, so when every
// period holds the same number of events, equal-event binning with P = periods
// reproduces the panel exactly.
inline std::vector<EventRecord> panel_events(const ObservationMatrix& m, const ObservationSpan& span) {
  const std::int64_t slot = (span.end - span.start) / static_cast<std::int64_t>(m.periods());
  if (slot < 1) throw ValidationError("panel_events: span too short for the number of periods");
  std::vector<EventRecord> out;
  for (std::size_t p = 0; p < m.periods(); ++p) {
    const std::int64_t t = span.start + static_cast<std::int64_t>(p) * slot;
    for (std::size_t u = 0; u < m.user_count(); ++u) {
      for (std::size_t l = 0; l < m.label_count(); ++l) {
        for (std::uint32_t c = 0; c < m.count(u, p, l); ++c) out.push_back({m.users()[u], t, static_cast<Label>(l)});
      }
    }
  }
  return out;
}

// Largest-remainder apportionment of `total` over `weights`; remainder ties
// go to the lower index.
template <std::size_t N>
std::array<std::size_t, N> apportion(std::size_t total, const std::array<double, N>& weights) {
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ValidationError("apportion: weights must be nonnegative");
    sum += w;
  }
  if (sum <= 0.0) throw ValidationError("apportion: weights must not all be zero");
  std::array<std::size_t, N> out{};
  std::array<double, N> rem{};
  std::size_t given = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const double exact = weights[i] / sum * static_cast<double>(total);
    out[i] = static_cast<std::size_t>(exact);
    rem[i] = exact - static_cast<double>(out[i]);
    given += out[i];
  }
  std::array<std::size_t, N> order{};
  for (std::size_t i = 0; i < N; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; given < total; ++i, ++given) ++out[order[i % N]];
  return out;
}

// Per-period event regime of a planted user: Poisson event count with the
// given mean and label mix.
struct Regime {
  double rate;
  std::array<double, 3> labels;
};

inline constexpr Regime kBaselineOnly{1.5, {1.0, 0.0, 0.0}};
inline constexpr Regime kFaint{1.5, {0.98, 0.02, 0.0}};
inline constexpr Regime kLow{1.5, {0.97, 0.025, 0.005}};
inline constexpr Regime kMixed{3.0, {0.6, 0.32, 0.08}};
inline constexpr Regime kHigh{5.0, {0.35, 0.25, 0.4}};

// Regime of a user of type `t` in period p of P. Trend types move through the
// three modeled regimes in thirds.
inline const Regime& regime_for(UserType t, std::size_t p, std::size_t P) {
  static constexpr std::array<const Regime*, 3> ladder{&kLow, &kMixed, &kHigh};
  const std::size_t third = std::min<std::size_t>(2, p * 3 / P);
  switch (t) {
    case UserType::none: return kBaselineOnly;
    case UserType::very_low: return kFaint;
    case UserType::low: return kLow;
    case UserType::high: return kMixed;
    case UserType::very_high: return kHigh;
    case UserType::escalating: return *ladder[third];
    case UserType::de_escalating: return *ladder[2 - third];
  }
  return kLow;
}

struct TypologyConfig {
  std::size_t users = 2000;
  std::size_t periods = 100;
  std::uint64_t seed = 1;
  ObservationSpan span = year_span();
  // Percent shares in kAllUserTypes order.
  std::array<double, 7> shares{28.9, 14.0, 27.0, 9.2, 8.8, 4.8, 7.4};
};

struct TypologyCorpus {
  std::vector<EventRecord> events;
  ObservationSpan span;
  TypeAssignment truth;
};

// Seven-type corpus with planted type counts. None users emit baseline events
// only, Very Low users add at least one label-1 event, and every modeled user
// carries at least one label-2 event so the rule-based split is exact.
inline TypologyCorpus generate_typology(const TypologyConfig& cfg) {
  if (cfg.users < 1 || cfg.periods < 1) throw ValidationError("synth: users and periods must be positive");
  const std::int64_t slot = (cfg.span.end - cfg.span.start) / static_cast<std::int64_t>(cfg.periods);
  if (slot < 1) throw ValidationError("synth: span too short for the number of periods");
  const auto counts = apportion(cfg.users, cfg.shares);

  Rng rng(cfg.seed);
  std::vector<UserType> planted;
  for (std::size_t t = 0; t < counts.size(); ++t) planted.insert(planted.end(), counts[t], kAllUserTypes[t]);
  for (std::size_t i = planted.size(); i > 1; --i) std::swap(planted[i - 1], planted[rng.index(i)]);

  TypologyCorpus out;
  out.span = cfg.span;
  auto stamp = [&](std::size_t p) {
    return cfg.span.start + static_cast<std::int64_t>(p) * slot + static_cast<std::int64_t>(rng.index(static_cast<std::size_t>(slot)));
  };
  for (std::size_t u = 0; u < cfg.users; ++u) {
    const std::string id = padded_id("s", u, cfg.users);
    const UserType type = planted[u];
    std::array<std::size_t, 3> seen{};
    for (std::size_t p = 0; p < cfg.periods; ++p) {
      const Regime& r = regime_for(type, p, cfg.periods);
      const unsigned n = rng.poisson(r.rate);
      for (unsigned i = 0; i < n; ++i) {
        const auto l = static_cast<Label>(rng.categorical(r.labels));
        ++seen[l];
        out.events.push_back({id, stamp(p), l});
      }
    }
    if (type == UserType::very_low && seen[1] == 0) out.events.push_back({id, stamp(rng.index(cfg.periods)), 1});
    if (type != UserType::none && type != UserType::very_low && seen[2] == 0) {
      out.events.push_back({id, stamp(rng.index(cfg.periods)), 2});
    }
    out.truth.users.push_back({id, type, std::nullopt, Provenance::rule});
  }
  return out;
}

}  // namespace trajektor::synth
