#pragma once

// Activity-scaled time windows and per-window behavior summaries.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trajektor/common.hpp"
#include "trajektor/corpus.hpp"
#include "trajektor/csv.hpp"

namespace trajektor {

// Partition of the global, time-ordered event sequence into `periods` windows
// holding equal numbers of events (sizes differ by at most one; the larger
// windows come first).
struct BinningScheme {
  std::size_t periods = 0;
  std::vector<std::size_t> boundaries;  // periods + 1 global event indices
  std::vector<std::pair<std::int64_t, std::int64_t>> window_time_spans;

  std::size_t window_size(std::size_t p) const { return boundaries[p + 1] - boundaries[p]; }
  std::size_t event_count() const { return boundaries.empty() ? 0 : boundaries.back(); }
};

inline BinningScheme build_bins(const EventSet& es, long long periods) {
  const std::size_t n = es.size();
  if (periods <= 0) throw ValidationError("binning: period count must be positive");
  if (static_cast<unsigned long long>(periods) > n) {
    throw ValidationError("binning: period count " + std::to_string(periods) + " exceeds event count " +
                          std::to_string(n) + " (P must not exceed N)");
  }
  BinningScheme b;
  b.periods = static_cast<std::size_t>(periods);
  const std::size_t base = n / b.periods;
  const std::size_t rem = n % b.periods;
  b.boundaries.reserve(b.periods + 1);
  b.boundaries.push_back(0);
  for (std::size_t p = 0; p < b.periods; ++p) b.boundaries.push_back(b.boundaries.back() + base + (p < rem ? 1 : 0));
  for (std::size_t p = 0; p < b.periods; ++p) {
    b.window_time_spans.emplace_back(es.events()[b.boundaries[p]].timestamp,
                                     es.events()[b.boundaries[p + 1] - 1].timestamp);
  }
  return b;
}

struct SummaryRule {
  enum class Kind { max_class, threshold };
  Kind kind = Kind::max_class;
  double share = 0.05;  // only used by Kind::threshold

  static SummaryRule max_class() { return {}; }
  static SummaryRule threshold(double q) {
    if (!(q > 0.0 && q <= 1.0)) throw ValidationError("summary threshold must lie in (0, 1]");
    return {Kind::threshold, q};
  }
};

// users x periods grid of summarized labels plus the raw per-window counts.
class ObservationMatrix {
 public:
  ObservationMatrix() = default;
  ObservationMatrix(std::vector<std::string> users, std::size_t periods, std::size_t labels)
      : users_(std::move(users)),
        periods_(periods),
        labels_(labels),
        obs_(users_.size() * periods, 0),
        counts_(users_.size() * periods * labels, 0) {}

  const std::vector<std::string>& users() const { return users_; }
  std::size_t user_count() const { return users_.size(); }
  std::size_t periods() const { return periods_; }
  std::size_t label_count() const { return labels_; }

  Label obs(std::size_t u, std::size_t p) const { return obs_[u * periods_ + p]; }
  Label& obs(std::size_t u, std::size_t p) { return obs_[u * periods_ + p]; }
  std::uint32_t count(std::size_t u, std::size_t p, std::size_t l) const {
    return counts_[(u * periods_ + p) * labels_ + l];
  }
  std::uint32_t& count(std::size_t u, std::size_t p, std::size_t l) { return counts_[(u * periods_ + p) * labels_ + l]; }

  // Observation sequence of user u (length periods()).
  std::span<const Label> row(std::size_t u) const { return {obs_.data() + u * periods_, periods_}; }

  // Total events of user u with label l across all periods.
  std::size_t user_label_total(std::size_t u, std::size_t l) const {
    std::size_t s = 0;
    for (std::size_t p = 0; p < periods_; ++p) s += count(u, p, l);
    return s;
  }

  std::size_t total_events() const {
    std::size_t s = 0;
    for (auto c : counts_) s += c;
    return s;
  }

  // Rows restricted to `keep` (indices into users()), preserving order.
  ObservationMatrix subset(const std::vector<std::size_t>& keep) const {
    std::vector<std::string> ids;
    for (auto u : keep) ids.push_back(users_.at(u));
    ObservationMatrix out(std::move(ids), periods_, labels_);
    for (std::size_t i = 0; i < keep.size(); ++i) {
      for (std::size_t p = 0; p < periods_; ++p) {
        out.obs(i, p) = obs(keep[i], p);
        for (std::size_t l = 0; l < labels_; ++l) out.count(i, p, l) = count(keep[i], p, l);
      }
    }
    return out;
  }

  bool operator==(const ObservationMatrix&) const = default;

 private:
  std::vector<std::string> users_;
  std::size_t periods_ = 0;
  std::size_t labels_ = 0;
  std::vector<Label> obs_;
  std::vector<std::uint32_t> counts_;
};

// Applies the summary rule to one user-window count vector. Empty windows map
// to the baseline label under both rules.
inline Label summarize_window(std::span<const std::uint32_t> counts, const SummaryRule& rule) {
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  if (total == 0) return 0;
  for (std::size_t l = counts.size(); l-- > 1;) {
    if (counts[l] == 0) continue;
    if (rule.kind == SummaryRule::Kind::max_class) return static_cast<Label>(l);
    if (static_cast<double>(counts[l]) / static_cast<double>(total) >= rule.share) return static_cast<Label>(l);
  }
  return 0;
}

inline ObservationMatrix summarize(const EventSet& es, const BinningScheme& bins, const SummaryRule& rule) {
  if (bins.event_count() != es.size()) throw ValidationError("binning scheme was not built from this event set");
  if (rule.kind == SummaryRule::Kind::threshold && !(rule.share > 0.0 && rule.share <= 1.0)) {
    throw ValidationError("summary threshold must lie in (0, 1]");
  }
  const std::size_t L = es.vocab().size();
  ObservationMatrix m(es.users(), bins.periods, L);
  for (std::size_t u = 0; u < es.user_count(); ++u) {
    std::size_t p = 0;
    for (std::size_t i : es.user_events(u)) {
      while (i >= bins.boundaries[p + 1]) ++p;
      ++m.count(u, p, es.events()[i].label);
    }
    std::vector<std::uint32_t> window(L);
    for (std::size_t q = 0; q < bins.periods; ++q) {
      for (std::size_t l = 0; l < L; ++l) window[l] = m.count(u, q, l);
      m.obs(u, q) = summarize_window(window, rule);
    }
  }
  return m;
}

// --- serialization ---------------------------------------------------------

inline std::string bins_to_csv(const BinningScheme& b) {
  csv::Writer w;
  w.row("period", "first_event", "end_event", "size", "start_ts", "end_ts");
  for (std::size_t p = 0; p < b.periods; ++p) {
    w.row(p + 1, b.boundaries[p], b.boundaries[p + 1], b.window_size(p), b.window_time_spans[p].first,
          b.window_time_spans[p].second);
  }
  return w.str();
}

inline BinningScheme bins_from_csv(std::string_view text) {
  const auto t = csv::parse_table(text, "bins");
  BinningScheme b;
  b.periods = t.rows.size();
  if (b.periods == 0) throw ValidationError("bins: no periods");
  const auto c_first = t.column("first_event"), c_end = t.column("end_event");
  const auto c_s = t.column("start_ts"), c_e = t.column("end_ts");
  b.boundaries.push_back(static_cast<std::size_t>(parse_int(t.rows[0][c_first], "first_event")));
  for (const auto& r : t.rows) {
    b.boundaries.push_back(static_cast<std::size_t>(parse_int(r[c_end], "end_event")));
    b.window_time_spans.emplace_back(parse_int(r[c_s], "start_ts"), parse_int(r[c_e], "end_ts"));
  }
  for (std::size_t p = 0; p < b.periods; ++p) {
    if (b.boundaries[p + 1] <= b.boundaries[p]) throw ValidationError("bins: boundaries must strictly increase");
  }
  return b;
}

inline std::string observations_to_csv(const ObservationMatrix& m, const LabelVocabulary& vocab) {
  csv::Writer w;
  std::vector<std::string> header{"user_id"};
  for (std::size_t p = 0; p < m.periods(); ++p) header.push_back("p" + std::to_string(p + 1));
  w.row(header);
  for (std::size_t u = 0; u < m.user_count(); ++u) {
    std::vector<std::string> r{m.users()[u]};
    for (std::size_t p = 0; p < m.periods(); ++p) r.push_back(vocab.name(m.obs(u, p)));
    w.row(r);
  }
  return w.str();
}

// Long format, nonzero cells only.
inline std::string counts_to_csv(const ObservationMatrix& m, const LabelVocabulary& vocab) {
  csv::Writer w;
  w.row("user_id", "period", "label", "count");
  for (std::size_t u = 0; u < m.user_count(); ++u) {
    for (std::size_t p = 0; p < m.periods(); ++p) {
      for (std::size_t l = 0; l < m.label_count(); ++l) {
        if (const auto c = m.count(u, p, l)) w.row(m.users()[u], p + 1, vocab.name(static_cast<Label>(l)), c);
      }
    }
  }
  return w.str();
}

inline ObservationMatrix observations_from_csv(std::string_view obs_text, std::string_view counts_text,
                                               const LabelVocabulary& vocab) {
  const auto t = csv::parse_table(obs_text, "observations");
  if (t.header.empty() || t.header[0] != "user_id") throw ValidationError("observations: first column must be user_id");
  const std::size_t P = t.header.size() - 1;
  std::vector<std::string> users;
  std::map<std::string, std::size_t> pos;
  for (const auto& r : t.rows) {
    pos[r[0]] = users.size();
    users.push_back(r[0]);
  }
  ObservationMatrix m(users, P, vocab.size());
  for (std::size_t u = 0; u < t.rows.size(); ++u) {
    for (std::size_t p = 0; p < P; ++p) m.obs(u, p) = lookup_label(vocab, t.rows[u][p + 1], u + 2);
  }
  const auto c = csv::parse_table(counts_text, "counts");
  const auto cu = c.column("user_id"), cp = c.column("period"), cl = c.column("label"), cc = c.column("count");
  for (std::size_t i = 0; i < c.rows.size(); ++i) {
    const auto& r = c.rows[i];
    auto it = pos.find(r[cu]);
    if (it == pos.end()) throw ValidationError("counts: unknown user '" + r[cu] + "'");
    const auto p = parse_int(r[cp], "period");
    if (p < 1 || static_cast<std::size_t>(p) > P) throw ValidationError("counts: period out of range");
    const Label l = lookup_label(vocab, r[cl], i + 2);
    m.count(it->second, static_cast<std::size_t>(p - 1), l) = static_cast<std::uint32_t>(parse_int(r[cc], "count"));
  }
  return m;
}

}  // namespace trajektor
