#pragma once

// Group-level TScores, differencing, Gini coefficients and per-type summaries.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trajektor/binning.hpp"
#include "trajektor/common.hpp"
#include "trajektor/corpus.hpp"
#include "trajektor/csv.hpp"
#include "trajektor/types.hpp"

namespace trajektor {

using Cell = std::optional<double>;  // empty when the cohort mean is zero

// TScore = 100 * (group mean events per user) / (cohort mean events per user)
// per period and label. The `combined` channel pools every non-baseline label.
struct TScoreSeries {
  std::vector<std::string> groups;
  std::size_t periods = 0;
  std::size_t labels = 0;
  std::size_t cohort_users = 0;
  std::vector<std::size_t> group_users;

  std::vector<double> cohort_mean;  // [p][l]
  std::vector<double> cohort_mean_combined;  // [p]
  std::vector<double> group_mean;   // [g][p][l]
  std::vector<double> group_mean_combined;   // [g][p]
  std::vector<Cell> values;         // [g][p][l]
  std::vector<Cell> combined;       // [g][p]

  const Cell& value(std::size_t g, std::size_t p, std::size_t l) const { return values[(g * periods + p) * labels + l]; }
  const Cell& combined_value(std::size_t g, std::size_t p) const { return combined[g * periods + p]; }
  double mu(std::size_t p, std::size_t l) const { return cohort_mean[p * labels + l]; }

  std::size_t group_index(std::string_view name) const {
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (groups[g] == name) return g;
    }
    throw ValidationError("no TScore group named '" + std::string(name) + "'");
  }

  // One group's series for label l (or the combined channel when l == labels).
  std::vector<Cell> series(std::size_t g, std::size_t l) const {
    std::vector<Cell> out(periods);
    for (std::size_t p = 0; p < periods; ++p) out[p] = l == labels ? combined_value(g, p) : value(g, p, l);
    return out;
  }
};

// `group_of_user` is aligned with counts.users(); an empty string leaves the
// user out of every group while still counting toward the cohort mean.
// Groups are reported in the order of `group_names`; a listed group with no
// members is an error.
inline TScoreSeries tscore(const ObservationMatrix& counts, const std::vector<std::string>& group_of_user,
                           const std::vector<std::string>& group_names) {
  if (group_of_user.size() != counts.user_count()) throw ValidationError("tscore: one group entry per user required");
  if (counts.user_count() == 0) throw ValidationError("tscore: empty cohort");
  const std::size_t P = counts.periods(), L = counts.label_count(), G = group_names.size();
  std::map<std::string, std::size_t> gidx;
  for (std::size_t g = 0; g < G; ++g) gidx.emplace(group_names[g], g);

  TScoreSeries s;
  s.groups = group_names;
  s.periods = P;
  s.labels = L;
  s.cohort_users = counts.user_count();
  s.group_users.assign(G, 0);
  std::vector<double> sum(P * L, 0.0), gsum(G * P * L, 0.0);
  for (std::size_t u = 0; u < counts.user_count(); ++u) {
    std::optional<std::size_t> g;
    if (!group_of_user[u].empty()) {
      auto it = gidx.find(group_of_user[u]);
      if (it == gidx.end()) throw ValidationError("tscore: user assigned to unlisted group '" + group_of_user[u] + "'");
      g = it->second;
      ++s.group_users[*g];
    }
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t l = 0; l < L; ++l) {
        const double c = counts.count(u, p, l);
        sum[p * L + l] += c;
        if (g) gsum[(*g * P + p) * L + l] += c;
      }
    }
  }
  for (std::size_t g = 0; g < G; ++g) {
    if (s.group_users[g] == 0) throw ValidationError("tscore: group '" + group_names[g] + "' has no users");
  }
  const double U = static_cast<double>(s.cohort_users);
  s.cohort_mean.resize(P * L);
  s.cohort_mean_combined.assign(P, 0.0);
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t l = 0; l < L; ++l) {
      s.cohort_mean[p * L + l] = sum[p * L + l] / U;
      if (l > 0) s.cohort_mean_combined[p] += sum[p * L + l];
    }
    s.cohort_mean_combined[p] /= U;
  }
  s.group_mean.resize(G * P * L);
  s.group_mean_combined.assign(G * P, 0.0);
  s.values.resize(G * P * L);
  s.combined.resize(G * P);
  for (std::size_t g = 0; g < G; ++g) {
    const double ug = static_cast<double>(s.group_users[g]);
    for (std::size_t p = 0; p < P; ++p) {
      double comb = 0.0;
      for (std::size_t l = 0; l < L; ++l) {
        const std::size_t i = (g * P + p) * L + l;
        s.group_mean[i] = gsum[i] / ug;
        if (l > 0) comb += gsum[i];
        if (sum[p * L + l] > 0.0) s.values[i] = s.group_mean[i] / s.cohort_mean[p * L + l] * 100.0;
      }
      s.group_mean_combined[g * P + p] = comb / ug;
      if (s.cohort_mean_combined[p] > 0.0) {
        s.combined[g * P + p] = s.group_mean_combined[g * P + p] / s.cohort_mean_combined[p] * 100.0;
      }
    }
  }
  return s;
}

// TScores per user type (types present in the assignment, reporting order).
inline TScoreSeries tscore(const ObservationMatrix& counts, const TypeAssignment& types) {
  const auto by_user = types.by_user();
  std::vector<std::string> group_of_user(counts.user_count());
  std::map<UserType, bool> present;
  for (std::size_t u = 0; u < counts.user_count(); ++u) {
    auto it = by_user.find(counts.users()[u]);
    if (it == by_user.end()) throw ValidationError("tscore: user '" + counts.users()[u] + "' has no type");
    group_of_user[u] = std::string(type_name(it->second));
    present[it->second] = true;
  }
  std::vector<std::string> names;
  for (auto t : kAllUserTypes) {
    if (present.count(t)) names.emplace_back(type_name(t));
  }
  return tscore(counts, group_of_user, names);
}

// First differences along periods; an undefined endpoint gives an undefined
// difference.
inline std::vector<Cell> difference(std::span<const Cell> series) {
  if (series.size() < 2) throw ValidationError("difference: need at least two periods");
  std::vector<Cell> out(series.size() - 1);
  for (std::size_t p = 0; p + 1 < series.size(); ++p) {
    if (series[p] && series[p + 1]) out[p] = *series[p + 1] - *series[p];
  }
  return out;
}

struct DifferencedSeries {
  std::vector<std::string> groups;
  std::size_t periods = 0;  // source periods; each series has periods - 1 entries
  std::size_t labels = 0;
  std::vector<std::vector<std::vector<Cell>>> values;  // [g][l][p]; l == labels is the combined channel
};

inline DifferencedSeries difference(const TScoreSeries& s) {
  DifferencedSeries d{s.groups, s.periods, s.labels, {}};
  for (std::size_t g = 0; g < s.groups.size(); ++g) {
    std::vector<std::vector<Cell>> per_label;
    for (std::size_t l = 0; l <= s.labels; ++l) per_label.push_back(difference(s.series(g, l)));
    d.values.push_back(std::move(per_label));
  }
  return d;
}

// Gini coefficient via the sorted cumulative form:
// G = 2 * sum_i i * x_(i) / (n * sum x) - (n + 1) / n.
inline double gini(std::span<const double> values) {
  if (values.empty()) throw ValidationError("gini: empty input");
  std::vector<double> x(values.begin(), values.end());
  double total = 0.0;
  for (double v : x) {
    if (!(v >= 0.0)) throw ValidationError("gini: values must be nonnegative");
    total += v;
  }
  if (!(total > 0.0)) throw ValidationError("gini: at least one value must be positive");
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double weighted = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) weighted += static_cast<double>(i + 1) * x[i];
  const double g = 2.0 * weighted / (n * total) - (n + 1.0) / n;
  return std::max(0.0, g);
}

struct GiniReport {
  std::vector<std::optional<double>> per_label;  // empty when nobody has that label
  std::optional<double> combined;
  double all_events = 0.0;
};

inline GiniReport gini_report(const CohortSummary& cohort) {
  const std::size_t L = cohort.label_totals.size();
  GiniReport r;
  auto safe = [](const std::vector<double>& v) -> std::optional<double> {
    for (double x : v) {
      if (x > 0.0) return gini(v);
    }
    return std::nullopt;
  };
  std::vector<double> col(cohort.user_totals.size());
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t u = 0; u < col.size(); ++u) col[u] = static_cast<double>(cohort.user_label_counts[u][l]);
    r.per_label.push_back(safe(col));
  }
  for (std::size_t u = 0; u < col.size(); ++u) {
    col[u] = static_cast<double>(cohort.user_totals[u] - cohort.user_label_counts[u][0]);
  }
  r.combined = safe(col);
  for (std::size_t u = 0; u < col.size(); ++u) col[u] = static_cast<double>(cohort.user_totals[u]);
  r.all_events = gini(col);
  return r;
}

struct TypeSummaryRow {
  std::string name;
  std::size_t users = 0;
  std::vector<double> mean, sd, share;  // per label
  double total_mean = 0.0;
};

// Per-type mean, population standard deviation and share of each label's
// per-user counts, followed by a cohort row over all users.
struct TypeSummary {
  std::vector<TypeSummaryRow> rows;  // types in reporting order, then "Cohort"
};

inline TypeSummaryRow summarize_users(std::string name, const std::vector<std::vector<double>>& per_user, std::size_t L) {
  TypeSummaryRow row{std::move(name), per_user.size(), std::vector<double>(L, 0.0), std::vector<double>(L, 0.0),
                     std::vector<double>(L, 0.0), 0.0};
  const double n = static_cast<double>(per_user.size());
  for (const auto& c : per_user) {
    for (std::size_t l = 0; l < L; ++l) row.mean[l] += c[l];
  }
  for (std::size_t l = 0; l < L; ++l) {
    row.mean[l] /= n;
    row.total_mean += row.mean[l];
  }
  for (const auto& c : per_user) {
    for (std::size_t l = 0; l < L; ++l) row.sd[l] += (c[l] - row.mean[l]) * (c[l] - row.mean[l]);
  }
  for (std::size_t l = 0; l < L; ++l) {
    row.sd[l] = std::sqrt(row.sd[l] / n);
    row.share[l] = row.total_mean > 0.0 ? row.mean[l] / row.total_mean : 0.0;
  }
  return row;
}

inline TypeSummary type_summary(const EventSet& es, const TypeAssignment& types) {
  const auto cohort = cohort_stats(es);
  const auto by_user = types.by_user();
  const std::size_t L = es.vocab().size();
  std::map<UserType, std::vector<std::vector<double>>> grouped;
  std::vector<std::vector<double>> all;
  for (std::size_t u = 0; u < es.user_count(); ++u) {
    auto it = by_user.find(es.users()[u]);
    if (it == by_user.end()) throw ValidationError("type_summary: user '" + es.users()[u] + "' has no type");
    std::vector<double> c(L);
    for (std::size_t l = 0; l < L; ++l) c[l] = static_cast<double>(cohort.user_label_counts[u][l]);
    grouped[it->second].push_back(c);
    all.push_back(std::move(c));
  }
  TypeSummary s;
  for (auto t : kAllUserTypes) {
    if (auto it = grouped.find(t); it != grouped.end()) {
      s.rows.push_back(summarize_users(std::string(type_name(t)), it->second, L));
    }
  }
  s.rows.push_back(summarize_users("Cohort", all, L));
  return s;
}

// --- serialization ---------------------------------------------------------

inline std::string cell_text(const Cell& c) { return c ? format_double(*c) : std::string(); }

inline std::string tscore_to_csv(const TScoreSeries& s, const LabelVocabulary& vocab) {
  csv::Writer w;
  w.row("type", "period", "label", "tscore");
  for (std::size_t g = 0; g < s.groups.size(); ++g) {
    for (std::size_t p = 0; p < s.periods; ++p) {
      for (std::size_t l = 0; l < s.labels; ++l) {
        w.row(s.groups[g], p + 1, vocab.name(static_cast<Label>(l)), cell_text(s.value(g, p, l)));
      }
      w.row(s.groups[g], p + 1, "combined", cell_text(s.combined_value(g, p)));
    }
  }
  return w.str();
}

inline std::string differenced_to_csv(const DifferencedSeries& d, const LabelVocabulary& vocab) {
  csv::Writer w;
  w.row("type", "period", "label", "difference");
  for (std::size_t g = 0; g < d.groups.size(); ++g) {
    for (std::size_t p = 0; p + 1 < d.periods; ++p) {
      for (std::size_t l = 0; l <= d.labels; ++l) {
        w.row(d.groups[g], p + 1, l == d.labels ? std::string("combined") : vocab.name(static_cast<Label>(l)),
              cell_text(d.values[g][l][p]));
      }
    }
  }
  return w.str();
}

inline std::string gini_to_csv(const GiniReport& r, const LabelVocabulary& vocab) {
  csv::Writer w;
  w.row("distribution", "gini");
  for (std::size_t l = 0; l < r.per_label.size(); ++l) w.row(vocab.name(static_cast<Label>(l)), cell_text(r.per_label[l]));
  w.row("combined", cell_text(r.combined));
  w.row("all", format_double(r.all_events));
  return w.str();
}

inline std::string type_summary_to_csv(const TypeSummary& s, const LabelVocabulary& vocab) {
  csv::Writer w;
  std::vector<std::string> header{"type", "users"};
  for (const auto& n : vocab.names()) {
    header.push_back("mean_" + n);
    header.push_back("sd_" + n);
    header.push_back("share_" + n);
  }
  header.push_back("mean_total");
  w.row(header);
  for (const auto& r : s.rows) {
    std::vector<std::string> cells{r.name, std::to_string(r.users)};
    for (std::size_t l = 0; l < r.mean.size(); ++l) {
      cells.push_back(format_double(r.mean[l]));
      cells.push_back(format_double(r.sd[l]));
      cells.push_back(format_double(r.share[l]));
    }
    cells.push_back(format_double(r.total_mean));
    w.row(cells);
  }
  return w.str();
}

inline TScoreSeries tscore_from_csv(std::string_view text, const LabelVocabulary& vocab) {
  const auto t = csv::parse_table(text, "tscore");
  const auto cg = t.column("type"), cp = t.column("period"), cl = t.column("label"), cv = t.column("tscore");
  TScoreSeries s;
  s.labels = vocab.size();
  std::map<std::string, std::size_t> gidx;
  for (const auto& r : t.rows) {
    if (!gidx.count(r[cg])) {
      gidx.emplace(r[cg], s.groups.size());
      s.groups.push_back(r[cg]);
    }
    s.periods = std::max<std::size_t>(s.periods, static_cast<std::size_t>(parse_int(r[cp], "period")));
  }
  const std::size_t G = s.groups.size(), P = s.periods, L = s.labels;
  s.values.assign(G * P * L, std::nullopt);
  s.combined.assign(G * P, std::nullopt);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    const std::size_t g = gidx[r[cg]];
    const auto p = static_cast<std::size_t>(parse_int(r[cp], "period")) - 1;
    Cell v;
    if (!r[cv].empty()) v = parse_double(r[cv], "tscore");
    if (r[cl] == "combined") s.combined[g * P + p] = v;
    else s.values[(g * P + p) * L + lookup_label(vocab, r[cl], i + 2)] = v;
  }
  return s;
}

}  // namespace trajektor
