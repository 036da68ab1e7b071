#pragma once

// Event ingestion, cohort statistics and user-level filtering.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "trajektor/common.hpp"
#include "trajektor/csv.hpp"

namespace trajektor {

inline constexpr std::int64_t kSecondsPerDay = 86400;

struct EventRecord {
  std::string user_id;
  std::int64_t timestamp = 0;  // seconds since epoch, UTC
  Label label = 0;

  bool operator==(const EventRecord&) const = default;
};

struct ObservationSpan {
  std::int64_t start = 0;
  std::int64_t end = 0;

  double days() const { return static_cast<double>(end - start) / kSecondsPerDay; }
};

// Immutable, time-ordered event collection with a per-user index.
//
// Events are sorted by timestamp with ties kept in input order. Users are
// indexed in lexicographic order of their ids so downstream matrices have a
// stable row order.
class EventSet {
 public:
  EventSet() = default;

  // Sorts and indexes `events`. When `span` is empty it is taken from the
  // earliest and latest timestamps.
  static EventSet build(std::vector<EventRecord> events, std::optional<ObservationSpan> span,
                        LabelVocabulary vocab = {}) {
    EventSet es;
    es.vocab_ = std::move(vocab);
    std::stable_sort(events.begin(), events.end(),
                     [](const EventRecord& a, const EventRecord& b) { return a.timestamp < b.timestamp; });
    for (const auto& e : events) {
      if (e.user_id.empty()) throw ValidationError("event with empty user_id");
      if (e.label >= es.vocab_.size()) {
        throw ValidationError("event label index " + std::to_string(e.label) + " outside vocabulary");
      }
    }
    if (span) {
      if (span->end < span->start) throw ValidationError("observation span ends before it starts");
      for (const auto& e : events) {
        if (e.timestamp < span->start || e.timestamp > span->end) {
          throw ValidationError("event timestamp " + std::to_string(e.timestamp) + " for user '" + e.user_id +
                                "' lies outside the observation span");
        }
      }
      es.span_ = *span;
    } else if (!events.empty()) {
      es.span_ = {events.front().timestamp, events.back().timestamp};
    }
    es.events_ = std::move(events);

    std::map<std::string, std::vector<std::size_t>> by_user;
    for (std::size_t i = 0; i < es.events_.size(); ++i) by_user[es.events_[i].user_id].push_back(i);
    es.users_.reserve(by_user.size());
    es.user_events_.reserve(by_user.size());
    for (auto& [id, positions] : by_user) {
      es.user_lookup_.emplace(id, es.users_.size());
      es.users_.push_back(id);
      es.user_events_.push_back(std::move(positions));
    }
    return es;
  }

  const std::vector<EventRecord>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }
  bool empty() const { return events_.empty(); }
  const ObservationSpan& span() const { return span_; }
  const LabelVocabulary& vocab() const { return vocab_; }

  const std::vector<std::string>& users() const { return users_; }
  std::size_t user_count() const { return users_.size(); }
  // Global event positions belonging to user `u` (index into users()).
  const std::vector<std::size_t>& user_events(std::size_t u) const { return user_events_[u]; }

  std::optional<std::size_t> user_position(const std::string& id) const {
    auto it = user_lookup_.find(id);
    if (it == user_lookup_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<EventRecord> events_;
  ObservationSpan span_;
  LabelVocabulary vocab_;
  std::vector<std::string> users_;
  std::vector<std::vector<std::size_t>> user_events_;
  std::map<std::string, std::size_t> user_lookup_;
};

enum class EventFormat { csv, jsonl };

inline EventFormat parse_event_format(std::string_view s) {
  if (s == "csv") return EventFormat::csv;
  if (s == "jsonl") return EventFormat::jsonl;
  throw ValidationError("unknown event format '" + std::string(s) + "' (expected csv or jsonl)");
}

inline Label lookup_label(const LabelVocabulary& vocab, std::string_view token, std::size_t line_no) {
  const std::size_t idx = vocab.find(trim(token));
  if (idx == vocab.size()) {
    throw ValidationError("unknown label '" + std::string(trim(token)) + "' at line " + std::to_string(line_no));
  }
  return static_cast<Label>(idx);
}

// Parses a labeled event stream.
//
// CSV input needs a header naming user_id, timestamp and label (any order).
// JSONL input carries one object per line with the same keys. Errors name the
// offending line.
inline EventSet parse_events(std::string_view text, EventFormat format, const LabelVocabulary& vocab = {},
                             std::optional<ObservationSpan> span = std::nullopt) {
  std::vector<EventRecord> events;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  std::size_t col_user = 0, col_ts = 0, col_label = 0, n_cols = 0;
  bool have_header = format != EventFormat::csv;

  auto malformed = [&](const std::string& why) {
    return ValidationError("malformed line " + std::to_string(line_no) + ": " + why);
  };

  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (trim(line).empty()) continue;

    if (format == EventFormat::csv) {
      auto fields = csv::split(line);
      if (!have_header) {
        n_cols = fields.size();
        bool fu = false, ft = false, fl = false;
        for (std::size_t i = 0; i < fields.size(); ++i) {
          const auto name = LabelVocabulary::lower(trim(fields[i]));
          if (name == "user_id") col_user = i, fu = true;
          else if (name == "timestamp") col_ts = i, ft = true;
          else if (name == "label") col_label = i, fl = true;
        }
        if (!(fu && ft && fl)) throw malformed("header must name user_id, timestamp and label");
        have_header = true;
        continue;
      }
      if (fields.size() != n_cols) {
        throw malformed("expected " + std::to_string(n_cols) + " fields, got " + std::to_string(fields.size()));
      }
      EventRecord e;
      e.user_id = std::string(trim(fields[col_user]));
      if (e.user_id.empty()) throw malformed("empty user_id");
      try {
        e.timestamp = parse_int(trim(fields[col_ts]), "timestamp");
      } catch (const ValidationError& err) {
        throw malformed(err.what());
      }
      e.label = lookup_label(vocab, fields[col_label], line_no);
      events.push_back(std::move(e));
    } else {
      nlohmann::json obj;
      try {
        obj = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& err) {
        throw malformed(err.what());
      }
      if (!obj.is_object() || !obj.contains("user_id") || !obj.contains("timestamp") || !obj.contains("label")) {
        throw malformed("object must carry user_id, timestamp and label");
      }
      EventRecord e;
      const auto& uid = obj["user_id"];
      if (uid.is_string()) e.user_id = uid.get<std::string>();
      else if (uid.is_number_integer()) e.user_id = std::to_string(uid.get<long long>());
      else throw malformed("user_id must be a string or integer");
      if (e.user_id.empty()) throw malformed("empty user_id");
      if (!obj["timestamp"].is_number_integer()) throw malformed("timestamp must be an integer");
      e.timestamp = obj["timestamp"].get<std::int64_t>();
      if (!obj["label"].is_string()) throw malformed("label must be a string");
      e.label = lookup_label(vocab, obj["label"].get<std::string>(), line_no);
      events.push_back(std::move(e));
    }
  }
  if (events.empty()) throw ValidationError("empty input: no events");
  return EventSet::build(std::move(events), span, vocab);
}

// Serializes in the EventSet's (sorted) order with lowercase label tokens.
inline std::string serialize_events(const EventSet& es, EventFormat format) {
  std::string out;
  if (format == EventFormat::csv) {
    csv::Writer w;
    w.row("user_id", "timestamp", "label");
    for (const auto& e : es.events()) w.row(e.user_id, e.timestamp, es.vocab().name(e.label));
    return w.str();
  }
  for (const auto& e : es.events()) {
    nlohmann::json obj = {{"user_id", e.user_id}, {"timestamp", e.timestamp}, {"label", es.vocab().name(e.label)}};
    out += obj.dump();
    out += '\n';
  }
  return out;
}

enum class SpanPolicy { full_span, user_span };

inline SpanPolicy parse_span_policy(std::string_view s) {
  if (s == "full_span") return SpanPolicy::full_span;
  if (s == "user_span") return SpanPolicy::user_span;
  throw ValidationError("unknown span policy '" + std::string(s) + "' (expected full_span or user_span)");
}

struct FilterResult {
  EventSet kept;
  std::vector<std::string> removed;
};

// Removes users whose average daily event rate strictly exceeds `threshold`.
//
// full_span divides by the whole observation span. user_span divides by the
// user's first-to-last event span, floored at one day.
inline FilterResult filter_bot_like(const EventSet& es, double threshold, SpanPolicy policy = SpanPolicy::full_span) {
  if (!(threshold > 0.0)) throw ValidationError("bot threshold must be positive");
  const double full_days = es.span().days();
  if (policy == SpanPolicy::full_span && !(full_days > 0.0)) {
    throw ValidationError("observation span must be longer than zero days for the full_span policy");
  }
  FilterResult result;
  std::vector<bool> drop(es.user_count(), false);
  for (std::size_t u = 0; u < es.user_count(); ++u) {
    const auto& pos = es.user_events(u);
    double days = full_days;
    if (policy == SpanPolicy::user_span) {
      const auto first = es.events()[pos.front()].timestamp;
      const auto last = es.events()[pos.back()].timestamp;
      days = std::max(1.0, static_cast<double>(last - first) / kSecondsPerDay);
    }
    if (static_cast<double>(pos.size()) > threshold * days) {
      drop[u] = true;
      result.removed.push_back(es.users()[u]);
    }
  }
  std::vector<EventRecord> kept;
  kept.reserve(es.size());
  for (const auto& e : es.events()) {
    if (!drop[*es.user_position(e.user_id)]) kept.push_back(e);
  }
  result.kept = EventSet::build(std::move(kept), es.span(), es.vocab());
  return result;
}

struct CohortSummary {
  std::vector<std::size_t> label_totals;
  std::vector<double> label_proportions;
  std::vector<std::size_t> user_totals;                    // aligned with EventSet::users()
  std::vector<std::vector<std::size_t>> user_label_counts;  // [user][label]
  std::size_t event_count = 0;
};

inline CohortSummary cohort_stats(const EventSet& es) {
  if (es.empty()) throw ValidationError("cohort statistics need at least one event");
  const std::size_t L = es.vocab().size();
  CohortSummary s;
  s.event_count = es.size();
  s.label_totals.assign(L, 0);
  s.user_totals.assign(es.user_count(), 0);
  s.user_label_counts.assign(es.user_count(), std::vector<std::size_t>(L, 0));
  for (std::size_t u = 0; u < es.user_count(); ++u) {
    for (std::size_t i : es.user_events(u)) {
      const Label l = es.events()[i].label;
      ++s.label_totals[l];
      ++s.user_label_counts[u][l];
      ++s.user_totals[u];
    }
  }
  s.label_proportions.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    s.label_proportions[l] = static_cast<double>(s.label_totals[l]) / static_cast<double>(s.event_count);
  }
  return s;
}

}  // namespace trajektor
