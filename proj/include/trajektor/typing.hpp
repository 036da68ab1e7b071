#pragma once

// Rule-based pre-separation, k-modes clustering of decoded state paths, and
// naming of the resulting clusters as user types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "trajektor/binning.hpp"
#include "trajektor/common.hpp"
#include "trajektor/lmm.hpp"
#include "trajektor/metrics.hpp"
#include "trajektor/rng.hpp"
#include "trajektor/types.hpp"

namespace trajektor {

struct Partition {
  std::vector<std::string> none_only;           // baseline events only
  std::vector<std::string> none_implicit_only;  // at least one label-1 event, nothing stronger
  std::vector<std::string> modeled;             // at least one event of label >= 2
  std::vector<std::size_t> modeled_rows;        // row indices of `modeled` in the source matrix
};

// Splits users on raw per-label totals (not window summaries).
inline Partition pre_separate(const ObservationMatrix& obs) {
  Partition part;
  const std::size_t L = obs.label_count();
  for (std::size_t u = 0; u < obs.user_count(); ++u) {
    std::size_t first = L > 1 ? obs.user_label_total(u, 1) : 0;
    std::size_t stronger = 0;
    for (std::size_t l = 2; l < L; ++l) stronger += obs.user_label_total(u, l);
    if (stronger > 0) {
      part.modeled.push_back(obs.users()[u]);
      part.modeled_rows.push_back(u);
    } else if (first > 0) {
      part.none_implicit_only.push_back(obs.users()[u]);
    } else {
      part.none_only.push_back(obs.users()[u]);
    }
  }
  return part;
}

inline std::string partition_to_csv(const Partition& p) {
  std::vector<std::pair<std::string, const char*>> rows;
  for (const auto& u : p.none_only) rows.emplace_back(u, "none_only");
  for (const auto& u : p.none_implicit_only) rows.emplace_back(u, "none_implicit_only");
  for (const auto& u : p.modeled) rows.emplace_back(u, "modeled");
  std::sort(rows.begin(), rows.end());
  csv::Writer w;
  w.row("user_id", "group");
  for (const auto& [u, g] : rows) w.row(u, g);
  return w.str();
}

using Trajectory = std::vector<State>;

inline std::size_t hamming(std::span<const State> a, std::span<const State> b) {
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

struct KModesConfig {
  enum class Init { random, frequency };
  std::size_t restarts = 10;
  std::size_t max_iter = 100;
  std::uint64_t seed = 1;
  Init init = Init::frequency;
};

struct Clustering {
  std::size_t k = 0;
  std::vector<Trajectory> modes;
  std::vector<std::size_t> assignment;  // 0-based cluster per input trajectory
  std::size_t wss = 0;                  // sum of Hamming distances to assigned modes
  std::uint64_t seed = 0;
  std::vector<std::size_t> restart_wss;
  std::vector<std::size_t> trace;  // WSS after each assignment step of the winning restart
  std::size_t reseeds = 0;         // empty-cluster re-seeds in the winning restart

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s(k, 0);
    for (auto a : assignment) ++s[a];
    return s;
  }
};

inline std::size_t count_distinct(std::span<const Trajectory> data) {
  std::set<Trajectory> seen(data.begin(), data.end());
  return seen.size();
}

namespace detail {

// Cao-style density seeding: the densest point first, then points maximizing
// density times distance to the nearest chosen mode. `first` overrides the
// first pick (used to diversify restarts).
inline std::vector<Trajectory> frequency_seeds(std::span<const Trajectory> data, std::size_t k, std::size_t states,
                                               std::optional<std::size_t> first) {
  const std::size_t n = data.size(), P = data.front().size();
  std::vector<double> freq(P * states, 0.0);
  for (const auto& x : data) {
    for (std::size_t p = 0; p < P; ++p) freq[p * states + x[p]] += 1.0;
  }
  std::vector<double> density(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < P; ++p) density[i] += freq[p * states + data[i][p]];
  }
  std::size_t pick = first.value_or(static_cast<std::size_t>(std::max_element(density.begin(), density.end()) - density.begin()));
  std::vector<Trajectory> modes{data[pick]};
  std::vector<std::size_t> nearest(n, std::numeric_limits<std::size_t>::max());
  while (modes.size() < k) {
    double best = -1.0;
    pick = 0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], hamming(data[i], modes.back()));
      const double score = density[i] * static_cast<double>(nearest[i]);
      if (score > best) {
        best = score;
        pick = i;
      }
    }
    modes.push_back(data[pick]);
  }
  return modes;
}

inline std::vector<Trajectory> random_seeds(std::span<const Trajectory> data, std::size_t k, Rng& rng) {
  std::vector<Trajectory> modes;
  std::set<Trajectory> used;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  for (std::size_t i : order) {
    if (used.insert(data[i]).second) modes.push_back(data[i]);
    if (modes.size() == k) break;
  }
  return modes;
}

inline Clustering run_kmodes(std::span<const Trajectory> data, std::vector<Trajectory> modes, std::size_t states,
                             std::size_t max_iter) {
  const std::size_t n = data.size(), k = modes.size(), P = data.front().size();
  Clustering c;
  c.k = k;
  c.assignment.assign(n, 0);
  std::vector<std::size_t> dist(n, 0);
  std::vector<std::size_t> counts(P * states);
  for (std::size_t it = 0; it < max_iter; ++it) {
    bool changed = false;
    std::size_t wss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = std::numeric_limits<std::size_t>::max(), arg = 0;
      for (std::size_t m = 0; m < k; ++m) {
        const std::size_t d = hamming(data[i], modes[m]);
        if (d < best) {
          best = d;
          arg = m;
        }
      }
      if (it == 0 || arg != c.assignment[i]) changed = true;
      c.assignment[i] = arg;
      dist[i] = best;
      wss += best;
    }
    // Empty clusters take over the point farthest from its mode.
    std::vector<std::size_t> size(k, 0);
    for (auto a : c.assignment) ++size[a];
    for (std::size_t m = 0; m < k; ++m) {
      if (size[m] > 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (size[c.assignment[i]] > 1 && dist[i] > 0 && (far == n || dist[i] > dist[far])) far = i;
      }
      if (far == n) continue;
      --size[c.assignment[far]];
      wss -= dist[far];
      c.assignment[far] = m;
      dist[far] = 0;
      modes[m] = data[far];
      size[m] = 1;
      ++c.reseeds;
      changed = true;
    }
    c.trace.push_back(wss);
    c.wss = wss;
    if (!changed) break;
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t m = 0; m < k; ++m) {
      std::fill(counts.begin(), counts.end(), 0);
      bool any = false;
      for (std::size_t i = 0; i < n; ++i) {
        if (c.assignment[i] != m) continue;
        any = true;
        for (std::size_t p = 0; p < P; ++p) ++counts[p * states + data[i][p]];
      }
      if (!any) continue;
      for (std::size_t p = 0; p < P; ++p) {
        std::size_t arg = 0;
        for (std::size_t s = 1; s < states; ++s) {
          if (counts[p * states + s] > counts[p * states + arg]) arg = s;
        }
        modes[m][p] = static_cast<State>(arg);
      }
    }
  }
  c.modes = std::move(modes);
  return c;
}

}  // namespace detail

// k-modes (Hamming dissimilarity, positionwise modes) with seeded restarts;
// the lowest-WSS restart wins, ties to the lowest restart index.
inline Clustering kmodes_fit(std::span<const Trajectory> data, std::size_t k, const KModesConfig& cfg = {}) {
  if (data.empty()) throw ValidationError("kmodes: no trajectories");
  const std::size_t P = data.front().size();
  std::size_t states = 0;
  for (const auto& x : data) {
    if (x.size() != P || P == 0) throw ValidationError("kmodes: trajectories must share one nonzero length");
    for (State s : x) states = std::max<std::size_t>(states, s + 1u);
  }
  if (k < 1) throw ValidationError("kmodes: k must be at least 1");
  const std::size_t distinct = count_distinct(data);
  if (k > distinct) {
    throw ValidationError("kmodes: k = " + std::to_string(k) + " exceeds the " + std::to_string(distinct) +
                          " distinct trajectories");
  }
  if (cfg.restarts < 1 || cfg.max_iter < 1) throw ValidationError("kmodes: restarts and max_iter must be positive");
  Clustering best;
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    Rng rng(mix_seed(cfg.seed, r));
    std::vector<Trajectory> seeds;
    if (cfg.init == KModesConfig::Init::frequency) {
      std::optional<std::size_t> first;
      if (r > 0) first = rng.index(data.size());
      seeds = detail::frequency_seeds(data, k, states, first);
      // Density seeding can repeat a vector when few distinct ones exist.
      if (count_distinct(seeds) < k) seeds = detail::random_seeds(data, k, rng);
    } else {
      seeds = detail::random_seeds(data, k, rng);
    }
    Clustering c = detail::run_kmodes(data, std::move(seeds), states, cfg.max_iter);
    best.restart_wss.push_back(c.wss);
    if (r == 0 || c.wss < best.wss) {
      auto history = std::move(best.restart_wss);
      best = std::move(c);
      best.restart_wss = std::move(history);
    }
  }
  best.seed = cfg.seed;
  return best;
}

inline Clustering kmodes_fit(const std::vector<StateTrajectory>& trajs, std::size_t k, const KModesConfig& cfg = {}) {
  std::vector<Trajectory> data;
  data.reserve(trajs.size());
  for (const auto& t : trajs) data.push_back(t.states);
  return kmodes_fit(std::span<const Trajectory>(data), k, cfg);
}

struct WssPoint {
  std::size_t k = 0;
  std::size_t wss = 0;
  bool under_restarted = false;  // WSS above the previous k's value
};

inline std::vector<WssPoint> wss_curve(std::span<const Trajectory> data, std::size_t k_min, std::size_t k_max,
                                       const KModesConfig& cfg = {}) {
  const std::size_t distinct = count_distinct(data);
  if (k_min < 1 || k_min > k_max) throw ValidationError("wss_curve: invalid k range");
  k_max = std::min(k_max, distinct);
  std::vector<WssPoint> curve;
  for (std::size_t k = k_min; k <= k_max; ++k) {
    WssPoint pt{k, kmodes_fit(data, k, cfg).wss, false};
    if (!curve.empty() && pt.wss > curve.back().wss) pt.under_restarted = true;
    curve.push_back(pt);
  }
  return curve;
}

// Elbow of a WSS curve: the point farthest below the chord joining its
// endpoints, with both axes scaled to [0, 1].
inline std::size_t elbow(std::span<const WssPoint> curve) {
  if (curve.size() < 3) throw ValidationError("elbow: need at least three curve points");
  const double k0 = static_cast<double>(curve.front().k), k1 = static_cast<double>(curve.back().k);
  double hi = 0.0, lo = std::numeric_limits<double>::infinity();
  for (const auto& p : curve) {
    hi = std::max(hi, static_cast<double>(p.wss));
    lo = std::min(lo, static_cast<double>(p.wss));
  }
  const double range = hi > lo ? hi - lo : 1.0;
  const double y0 = (static_cast<double>(curve.front().wss) - lo) / range;
  const double y1 = (static_cast<double>(curve.back().wss) - lo) / range;
  std::size_t best_k = curve.front().k;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& p : curve) {
    const double x = (static_cast<double>(p.k) - k0) / (k1 - k0);
    const double y = (static_cast<double>(p.wss) - lo) / range;
    const double gap = (y0 + (y1 - y0) * x) - y;
    if (gap > best) {
      best = gap;
      best_k = p.k;
    }
  }
  return best_k;
}

struct TypeNamingConfig {
  double trend_threshold = 0.5;  // fitted change over the series / max(mean combined TScore, 100)
  std::map<std::size_t, UserType> overrides;  // 1-based cluster id -> type
};

struct ClusterProfile {
  std::size_t cluster = 0;  // 1-based
  double trend_slope = 0.0;     // slope of (combined - baseline) TScore per period
  double relative_trend = 0.0;  // trend_slope * (periods - 1) / max(mean_combined, 100)
  double mean_combined = 0.0;   // mean combined TScore
  UserType type = UserType::low;
  Provenance provenance = Provenance::heuristic;
};

inline std::string cluster_group_name(std::size_t cluster) { return "cluster_" + std::to_string(cluster); }

// Least-squares slope of y against period index over the defined cells.
inline double trend_slope(std::span<const Cell> y) {
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t p = 0; p < y.size(); ++p) {
    if (!y[p]) continue;
    const double x = static_cast<double>(p);
    n += 1;
    sx += x;
    sy += *y[p];
    sxx += x * x;
    sxy += x * *y[p];
  }
  const double den = n * sxx - sx * sx;
  if (n < 2 || den == 0.0) return 0.0;
  return (n * sxy - sx * sy) / den;
}

// Names each cluster from its TScores. The trend is the least-squares slope of
// the combined TScore minus the baseline TScore, expressed as the fitted change
// over the whole series relative to the cluster's mean combined TScore, or to
// the cohort level of 100 when the cluster sits below it. Scaling by the
// cluster's own level keeps a flat high-volume cluster from reading as a trend
// when the cohort mean drifts by a few percent; the floor of 100 keeps noise on
// a near-silent cluster from being inflated the same way. Trends beyond the threshold mark Escalating or
// De-escalating; the rest are ranked by mean combined TScore into Low, High and
// Very High. Overrides take precedence. Two clusters sharing a trend label is
// an error.
inline std::vector<ClusterProfile> name_clusters(const TScoreSeries& tscores, std::size_t k,
                                                 const TypeNamingConfig& cfg) {
  for (const auto& [cluster, type] : cfg.overrides) {
    if (cluster < 1 || cluster > k) throw ValidationError("override names unknown cluster " + std::to_string(cluster));
    if (type == UserType::none || type == UserType::very_low) {
      throw ValidationError("override for cluster " + std::to_string(cluster) + " must name a modeled type");
    }
  }
  std::vector<ClusterProfile> profiles;
  for (std::size_t c = 1; c <= k; ++c) {
    const std::size_t g = tscores.group_index(cluster_group_name(c));
    ClusterProfile prof;
    prof.cluster = c;
    std::vector<Cell> rel(tscores.periods);
    double sum = 0.0, n = 0.0;
    for (std::size_t p = 0; p < tscores.periods; ++p) {
      const auto& comb = tscores.combined_value(g, p);
      const auto& base = tscores.value(g, p, 0);
      if (comb) {
        sum += *comb;
        n += 1.0;
      }
      if (comb && base) rel[p] = *comb - *base;
    }
    prof.mean_combined = n > 0 ? sum / n : 0.0;
    prof.trend_slope = trend_slope(rel);
    if (tscores.periods > 1) {
      prof.relative_trend =
          prof.trend_slope * static_cast<double>(tscores.periods - 1) / std::max(prof.mean_combined, 100.0);
    }
    profiles.push_back(prof);
  }
  std::vector<std::size_t> stable;
  std::map<UserType, std::size_t> trend_owner;
  for (auto& prof : profiles) {
    if (auto it = cfg.overrides.find(prof.cluster); it != cfg.overrides.end()) {
      prof.type = it->second;
      prof.provenance = Provenance::manual_override;
    } else if (prof.relative_trend > cfg.trend_threshold) {
      prof.type = UserType::escalating;
    } else if (prof.relative_trend < -cfg.trend_threshold) {
      prof.type = UserType::de_escalating;
    } else {
      stable.push_back(prof.cluster - 1);
      continue;
    }
    if (prof.type == UserType::escalating || prof.type == UserType::de_escalating) {
      auto [it, fresh] = trend_owner.emplace(prof.type, prof.cluster);
      if (!fresh) {
        throw ValidationError("clusters " + std::to_string(it->second) + " and " + std::to_string(prof.cluster) +
                              " are both labelled " + std::string(type_name(prof.type)) +
                              "; resolve with a manual override");
      }
    }
  }
  std::stable_sort(stable.begin(), stable.end(), [&](std::size_t a, std::size_t b) {
    return profiles[a].mean_combined < profiles[b].mean_combined;
  });
  for (std::size_t r = 0; r < stable.size(); ++r) {
    auto& prof = profiles[stable[r]];
    if (r == 0) prof.type = UserType::low;
    else if (r + 1 == stable.size()) prof.type = UserType::very_high;
    else prof.type = UserType::high;
  }
  return profiles;
}

// Full seven-type assignment. `modeled_ids` must be aligned with
// clustering.assignment; `tscores` must contain one "cluster_<c>" group per
// cluster.
inline TypeAssignment assign_types(const Partition& partition, const std::vector<std::string>& modeled_ids,
                                   const Clustering& clustering, const TScoreSeries& tscores,
                                   const TypeNamingConfig& cfg, std::vector<ClusterProfile>* profiles_out = nullptr) {
  if (modeled_ids.size() != clustering.assignment.size() || modeled_ids.size() != partition.modeled.size()) {
    throw ValidationError("assign_types: clustering must cover exactly the modeled users");
  }
  const auto profiles = name_clusters(tscores, clustering.k, cfg);
  TypeAssignment out;
  for (const auto& u : partition.none_only) out.users.push_back({u, UserType::none, std::nullopt, Provenance::rule});
  for (const auto& u : partition.none_implicit_only) {
    out.users.push_back({u, UserType::very_low, std::nullopt, Provenance::rule});
  }
  for (std::size_t i = 0; i < modeled_ids.size(); ++i) {
    const auto& prof = profiles[clustering.assignment[i]];
    out.users.push_back({modeled_ids[i], prof.type, prof.cluster, prof.provenance});
  }
  std::sort(out.users.begin(), out.users.end(),
            [](const TypedUser& a, const TypedUser& b) { return a.user_id < b.user_id; });
  if (profiles_out) *profiles_out = profiles;
  return out;
}

// TScores grouped by cluster for the modeled users and by rule group for the
// pre-separated ones; the cohort mean runs over every row of `counts` unless
// `modeled_only` restricts the cohort to clustered users.
inline TScoreSeries cluster_tscores(const ObservationMatrix& counts, const Partition& partition,
                                    const std::vector<std::string>& modeled_ids, const Clustering& clustering,
                                    bool modeled_only = false) {
  std::map<std::string, std::string> group;
  for (const auto& u : partition.none_only) group[u] = std::string(type_name(UserType::none));
  for (const auto& u : partition.none_implicit_only) group[u] = std::string(type_name(UserType::very_low));
  for (std::size_t i = 0; i < modeled_ids.size(); ++i) {
    group[modeled_ids[i]] = cluster_group_name(clustering.assignment[i] + 1);
  }
  std::vector<std::size_t> rows;
  for (std::size_t u = 0; u < counts.user_count(); ++u) {
    const auto it = group.find(counts.users()[u]);
    if (it == group.end()) throw ValidationError("cluster_tscores: user '" + counts.users()[u] + "' is unassigned");
    if (!modeled_only || it->second.rfind("cluster_", 0) == 0) rows.push_back(u);
  }
  const ObservationMatrix cohort = rows.size() == counts.user_count() ? counts : counts.subset(rows);
  std::vector<std::string> of_user;
  std::set<std::string> present;
  for (const auto& id : cohort.users()) {
    of_user.push_back(group.at(id));
    present.insert(of_user.back());
  }
  std::vector<std::string> names;
  for (auto t : {UserType::none, UserType::very_low}) {
    if (present.count(std::string(type_name(t)))) names.emplace_back(type_name(t));
  }
  for (std::size_t c = 1; c <= clustering.k; ++c) names.push_back(cluster_group_name(c));
  return tscore(cohort, of_user, names);
}

// --- serialization ---------------------------------------------------------

inline std::string modes_to_csv(const Clustering& c) {
  csv::Writer w;
  const std::size_t P = c.modes.empty() ? 0 : c.modes.front().size();
  std::vector<std::string> header{"cluster_id"};
  for (std::size_t p = 0; p < P; ++p) header.push_back("p" + std::to_string(p + 1));
  w.row(header);
  for (std::size_t m = 0; m < c.k; ++m) {
    std::vector<std::string> r{std::to_string(m + 1)};
    for (State s : c.modes[m]) r.push_back(std::to_string(s + 1));
    w.row(r);
  }
  return w.str();
}

inline std::string assignment_to_csv(const Clustering& c, const std::vector<std::string>& ids) {
  csv::Writer w;
  w.row("user_id", "cluster_id");
  for (std::size_t i = 0; i < ids.size(); ++i) w.row(ids[i], c.assignment[i] + 1);
  return w.str();
}

inline std::string wss_to_csv(const std::vector<WssPoint>& curve) {
  csv::Writer w;
  w.row("k", "wss", "under_restarted");
  for (const auto& p : curve) w.row(p.k, p.wss, p.under_restarted ? "true" : "false");
  return w.str();
}

// Rebuilds a clustering from mode and assignment files; WSS is recomputed
// against `trajs` (aligned with the assignment rows).
inline Clustering clustering_from_csv(std::string_view modes_text, std::string_view assignment_text,
                                      const std::vector<StateTrajectory>& trajs) {
  const auto mt = csv::parse_table(modes_text, "modes");
  Clustering c;
  for (const auto& r : mt.rows) {
    Trajectory mode;
    for (std::size_t p = 1; p < r.size(); ++p) mode.push_back(static_cast<State>(parse_int(r[p], "mode state") - 1));
    c.modes.push_back(std::move(mode));
  }
  c.k = c.modes.size();
  const auto at = csv::parse_table(assignment_text, "assignment");
  const auto cu = at.column("user_id"), cc = at.column("cluster_id");
  std::map<std::string, std::size_t> cluster_of;
  for (const auto& r : at.rows) cluster_of[r[cu]] = static_cast<std::size_t>(parse_int(r[cc], "cluster_id"));
  for (const auto& t : trajs) {
    auto it = cluster_of.find(t.user_id);
    if (it == cluster_of.end() || it->second < 1 || it->second > c.k) {
      throw ValidationError("assignment: missing or invalid cluster for user '" + t.user_id + "'");
    }
    c.assignment.push_back(it->second - 1);
    c.wss += hamming(t.states, c.modes[it->second - 1]);
  }
  return c;
}

}  // namespace trajektor
