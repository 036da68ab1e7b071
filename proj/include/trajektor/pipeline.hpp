#pragma once

// Staged end-to-end run. Every stage reads its inputs from the run directory
// and writes its artifacts back there, so any stage can be re-run on its own
// from the files of the previous ones.

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajektor/binning.hpp"
#include "trajektor/corpus.hpp"
#include "trajektor/csv.hpp"
#include "trajektor/lmm.hpp"
#include "trajektor/metrics.hpp"
#include "trajektor/stats.hpp"
#include "trajektor/typing.hpp"

#ifndef TRAJEKTOR_VERSION
#define TRAJEKTOR_VERSION "0.0.0"
#endif

namespace trajektor::pipeline {

namespace fs = std::filesystem;

// --- configuration -----------------------------------------------------------

struct KeySpec {
  const char* key;
  const char* fallback;
  const char* help;
};

// Every recognised configuration key with its default. CLI flags use the same
// names (`--bot-threshold 40`).
inline const std::vector<KeySpec>& config_keys() {
  static const std::vector<KeySpec> keys{
      {"input", "", "event file (relative paths resolve against the config file)"},
      {"format", "csv", "event file format: csv or jsonl"},
      {"labels", "none,implicit,explicit", "ordered label vocabulary, baseline first"},
      {"span-start", "", "observation span start, epoch seconds (empty: first event)"},
      {"span-end", "", "observation span end, epoch seconds (empty: last event)"},
      {"bot-threshold", "40", "remove users averaging more events per day than this"},
      {"span-policy", "full_span", "rate denominator: full_span or user_span"},
      {"periods", "100", "number of equal-event windows"},
      {"summary-rule", "max_class", "window summary: max_class or threshold"},
      {"summary-share", "0.05", "minimum label share for the threshold rule"},
      {"states", "3", "latent state count, or a range such as 1..6"},
      {"select", "bic", "criterion used over a state range: aic or bic"},
      {"em-restarts", "10", "EM random restarts"},
      {"em-max-iter", "500", "EM iteration cap per restart"},
      {"em-tol", "1e-6", "EM log-likelihood gain tolerance"},
      {"em-init", "random", "EM initialisation: random or spread"},
      {"decode", "viterbi", "state decoding: viterbi or posterior"},
      {"clusters", "5", "k-modes cluster count"},
      {"kmodes-restarts", "10", "k-modes restarts"},
      {"kmodes-max-iter", "100", "k-modes iteration cap per restart"},
      {"kmodes-init", "frequency", "k-modes seeding: frequency or random"},
      {"wss-min", "2", "smallest k on the WSS curve"},
      {"wss-max", "10", "largest k on the WSS curve"},
      {"trend-threshold", "0.5", "relative TScore trend marking Escalating / De-escalating"},
      {"overrides", "", "manual cluster names, e.g. 2:High,4:Low"},
      {"cohort", "all", "TScore cohort: all retained users or modeled users only"},
      {"rank-test", "automatic", "pairwise rank-sum method: automatic, exact or normal"},
      {"bonferroni", "false", "Bonferroni-adjust pairwise p-values"},
      {"seed", "1", "root random seed"},
      {"record-timestamps", "false", "write wall-clock stage times into the manifest"},
  };
  return keys;
}

inline bool is_config_key(std::string_view key) {
  for (const auto& k : config_keys()) {
    if (key == k.key) return true;
  }
  return false;
}

// Flat key -> value settings with defaults filled in.
class Settings {
 public:
  Settings() {
    for (const auto& k : config_keys()) values_[k.key] = k.fallback;
  }

  void set(const std::string& key, std::string value) {
    if (!is_config_key(key)) throw ValidationError("unknown config key '" + key + "'");
    values_[key] = std::move(value);
  }
  const std::string& get(const std::string& key) const { return values_.at(key); }
  const std::map<std::string, std::string>& values() const { return values_; }

  // Base directory for resolving a relative `input`.
  fs::path base_dir;

 private:
  std::map<std::string, std::string> values_;
};

// Parses `key = value` lines; `#` starts a comment.
inline void apply_config_text(Settings& s, std::string_view text) {
  std::size_t pos = 0, line_no = 0;
  std::map<std::string, std::size_t> seen;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    if (!is_config_key(key)) {
      throw ValidationError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (auto [it, fresh] = seen.emplace(key, line_no); !fresh) {
      throw ValidationError("config line " + std::to_string(line_no) + ": '" + key + "' already set at line " +
                            std::to_string(it->second));
    }
    s.set(key, std::string(trim(line.substr(eq + 1))));
    if (pos > text.size()) break;
  }
}

inline Settings load_config(const fs::path& path) {
  Settings s;
  apply_config_text(s, csv::read_file(path.string()));
  s.base_dir = path.parent_path();
  return s;
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::string> split_list(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto end = s.find(sep, pos);
    if (end == std::string_view::npos) end = s.size();
    const auto item = trim(s.substr(pos, end - pos));
    if (!item.empty()) out.emplace_back(item);
    pos = end + 1;
  }
  return out;
}

enum class Criterion { aic, bic };

// Typed, validated view of Settings.
struct PipelineConfig {
  fs::path input;
  EventFormat format = EventFormat::csv;
  LabelVocabulary labels;
  std::optional<std::int64_t> span_start, span_end;
  double bot_threshold = 40.0;
  SpanPolicy span_policy = SpanPolicy::full_span;
  long long periods = 100;
  SummaryRule rule = SummaryRule::max_class();
  std::size_t states_min = 3, states_max = 3;
  Criterion select = Criterion::bic;
  EmConfig em;
  DecodeMethod decode = DecodeMethod::viterbi;
  std::size_t clusters = 5;
  KModesConfig kmodes;
  std::size_t wss_min = 2, wss_max = 10;
  TypeNamingConfig naming;
  bool modeled_cohort = false;
  stats::RankSumMethod rank_test = stats::RankSumMethod::automatic;
  bool bonferroni = false;
  std::uint64_t seed = 1;
  bool record_timestamps = false;
};

inline std::size_t positive(const Settings& s, const std::string& key) {
  const auto v = parse_int(s.get(key), key);
  if (v < 1) throw ValidationError(key + " must be at least 1");
  return static_cast<std::size_t>(v);
}

inline PipelineConfig resolve(const Settings& s, bool need_input) {
  PipelineConfig c;
  if (!s.get("input").empty()) {
    fs::path in(s.get("input"));
    c.input = in.is_relative() && !s.base_dir.empty() ? s.base_dir / in : in;
  }
  if (need_input) {
    if (c.input.empty()) throw ValidationError("input: no event file configured");
    if (!fs::is_regular_file(c.input)) throw ValidationError("input: '" + c.input.string() + "' does not exist");
  }
  c.format = parse_event_format(s.get("format"));
  c.labels = LabelVocabulary(split_list(s.get("labels"), ','));
  if (!s.get("span-start").empty()) c.span_start = parse_int(s.get("span-start"), "span-start");
  if (!s.get("span-end").empty()) c.span_end = parse_int(s.get("span-end"), "span-end");
  if (c.span_start.has_value() != c.span_end.has_value()) {
    throw ValidationError("span-start and span-end must be given together");
  }
  c.bot_threshold = parse_double(s.get("bot-threshold"), "bot-threshold");
  if (!(c.bot_threshold > 0.0)) throw ValidationError("bot-threshold must be positive");
  c.span_policy = parse_span_policy(s.get("span-policy"));
  c.periods = parse_int(s.get("periods"), "periods");
  if (c.periods < 1) throw ValidationError("periods must be at least 1");
  if (s.get("summary-rule") == "max_class") c.rule = SummaryRule::max_class();
  else if (s.get("summary-rule") == "threshold") c.rule = SummaryRule::threshold(parse_double(s.get("summary-share"), "summary-share"));
  else throw ValidationError("summary-rule: expected max_class or threshold");

  const std::string states = s.get("states");
  if (const auto dots = states.find(".."); dots != std::string::npos) {
    c.states_min = static_cast<std::size_t>(parse_int(states.substr(0, dots), "states"));
    c.states_max = static_cast<std::size_t>(parse_int(states.substr(dots + 2), "states"));
  } else {
    c.states_min = c.states_max = static_cast<std::size_t>(parse_int(states, "states"));
  }
  if (c.states_min < 1 || c.states_min > c.states_max || c.states_max > 12) {
    throw ValidationError("states: expected a count or range within 1..12");
  }
  if (s.get("select") == "aic") c.select = Criterion::aic;
  else if (s.get("select") == "bic") c.select = Criterion::bic;
  else throw ValidationError("select: expected aic or bic");

  c.seed = static_cast<std::uint64_t>(parse_int(s.get("seed"), "seed"));
  c.em.restarts = positive(s, "em-restarts");
  c.em.max_iter = positive(s, "em-max-iter");
  c.em.tol = parse_double(s.get("em-tol"), "em-tol");
  if (!(c.em.tol >= 0.0)) throw ValidationError("em-tol must be nonnegative");
  if (s.get("em-init") == "random") c.em.init = EmConfig::Init::random;
  else if (s.get("em-init") == "spread") c.em.init = EmConfig::Init::spread;
  else throw ValidationError("em-init: expected random or spread");
  c.em.seed = mix_seed(c.seed, 1);
  c.decode = parse_decode_method(s.get("decode"));

  c.clusters = positive(s, "clusters");
  c.kmodes.restarts = positive(s, "kmodes-restarts");
  c.kmodes.max_iter = positive(s, "kmodes-max-iter");
  if (s.get("kmodes-init") == "frequency") c.kmodes.init = KModesConfig::Init::frequency;
  else if (s.get("kmodes-init") == "random") c.kmodes.init = KModesConfig::Init::random;
  else throw ValidationError("kmodes-init: expected frequency or random");
  c.kmodes.seed = mix_seed(c.seed, 2);
  c.wss_min = positive(s, "wss-min");
  c.wss_max = positive(s, "wss-max");
  if (c.wss_min > c.wss_max) throw ValidationError("wss-min must not exceed wss-max");

  c.naming.trend_threshold = parse_double(s.get("trend-threshold"), "trend-threshold");
  if (!(c.naming.trend_threshold >= 0.0)) throw ValidationError("trend-threshold must be nonnegative");
  for (const auto& item : split_list(s.get("overrides"), ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ValidationError("overrides: expected cluster:type, got '" + item + "'");
    const auto cluster = parse_int(trim(std::string_view(item).substr(0, colon)), "override cluster");
    if (cluster < 1) throw ValidationError("overrides: cluster ids start at 1");
    c.naming.overrides[static_cast<std::size_t>(cluster)] = parse_user_type(trim(std::string_view(item).substr(colon + 1)));
  }
  if (s.get("cohort") == "all") c.modeled_cohort = false;
  else if (s.get("cohort") == "modeled") c.modeled_cohort = true;
  else throw ValidationError("cohort: expected all or modeled");
  if (s.get("rank-test") == "automatic") c.rank_test = stats::RankSumMethod::automatic;
  else if (s.get("rank-test") == "exact") c.rank_test = stats::RankSumMethod::exact;
  else if (s.get("rank-test") == "normal") c.rank_test = stats::RankSumMethod::normal;
  else throw ValidationError("rank-test: expected automatic, exact or normal");
  c.bonferroni = parse_bool(s.get("bonferroni"), "bonferroni");
  c.record_timestamps = parse_bool(s.get("record-timestamps"), "record-timestamps");
  return c;
}

// --- logging and hashing ------------------------------------------------------

enum class LogLevel { debug, info, warn };
using LogSink = std::function<void(LogLevel, const std::string&)>;

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

// --- stages ------------------------------------------------------------------

// Run directory plus the resolved configuration.
struct Workspace {
  fs::path dir;
  PipelineConfig cfg;
  LogSink log;

  std::string read(const std::string& name) const {
    const auto p = dir / name;
    if (!fs::is_regular_file(p)) throw ValidationError("missing artifact '" + p.string() + "' (run the earlier stage first)");
    return csv::read_file(p.string());
  }
  void write(const std::string& name, std::string_view content) const { csv::write_file((dir / name).string(), content); }
  void info(const std::string& msg) const {
    if (log) log(LogLevel::info, msg);
  }
  void debug(const std::string& msg) const {
    if (log) log(LogLevel::debug, msg);
  }
};

struct Stage {
  const char* name;
  std::vector<const char*> artifacts;
  void (*run)(const Workspace&);
};

namespace stages {

inline std::optional<ObservationSpan> configured_span(const PipelineConfig& c) {
  if (!c.span_start) return std::nullopt;
  return ObservationSpan{*c.span_start, *c.span_end};
}

inline EventSet load_events(const Workspace& ws) {
  return parse_events(ws.read("events.csv"), EventFormat::csv, ws.cfg.labels, configured_span(ws.cfg));
}

// Events of the users the filter stage kept.
inline EventSet load_kept(const Workspace& ws) {
  const EventSet all = load_events(ws);
  const auto t = csv::parse_table(ws.read("filter.csv"), "filter");
  const auto cu = t.column("user_id"), cr = t.column("removed");
  std::set<std::string> removed;
  for (const auto& r : t.rows) {
    if (r[cr] == "true") removed.insert(r[cu]);
  }
  std::vector<EventRecord> kept;
  for (const auto& e : all.events()) {
    if (!removed.count(e.user_id)) kept.push_back(e);
  }
  if (kept.empty()) throw Error("filter removed every user");
  return EventSet::build(std::move(kept), all.span(), all.vocab());
}

inline ObservationMatrix load_observations(const Workspace& ws) {
  return observations_from_csv(ws.read("observations.csv"), ws.read("counts.csv"), ws.cfg.labels);
}

inline Partition load_partition(const Workspace& ws, const ObservationMatrix& obs) {
  const auto t = csv::parse_table(ws.read("partition.csv"), "partition");
  const auto cu = t.column("user_id"), cg = t.column("group");
  std::map<std::string, std::string> group;
  for (const auto& r : t.rows) group[r[cu]] = r[cg];
  Partition p;
  for (std::size_t u = 0; u < obs.user_count(); ++u) {
    const auto it = group.find(obs.users()[u]);
    if (it == group.end()) throw ValidationError("partition: user '" + obs.users()[u] + "' missing");
    if (it->second == "none_only") p.none_only.push_back(it->first);
    else if (it->second == "none_implicit_only") p.none_implicit_only.push_back(it->first);
    else if (it->second == "modeled") {
      p.modeled.push_back(it->first);
      p.modeled_rows.push_back(u);
    } else {
      throw ValidationError("partition: unknown group '" + it->second + "'");
    }
  }
  return p;
}

inline std::vector<Trajectory> bare(const std::vector<StateTrajectory>& trajs) {
  std::vector<Trajectory> out;
  out.reserve(trajs.size());
  for (const auto& t : trajs) out.push_back(t.states);
  return out;
}

inline std::vector<std::string> ids_of(const std::vector<StateTrajectory>& trajs) {
  std::vector<std::string> out;
  for (const auto& t : trajs) out.push_back(t.user_id);
  return out;
}

inline void ingest(const Workspace& ws) {
  const auto es = parse_events(csv::read_file(ws.cfg.input.string()), ws.cfg.format, ws.cfg.labels,
                               configured_span(ws.cfg));
  ws.info("ingested " + std::to_string(es.size()) + " events from " + std::to_string(es.user_count()) + " users");
  ws.write("events.csv", serialize_events(es, EventFormat::csv));
}

inline void filter(const Workspace& ws) {
  const auto es = load_events(ws);
  const auto res = filter_bot_like(es, ws.cfg.bot_threshold, ws.cfg.span_policy);
  const std::set<std::string> removed(res.removed.begin(), res.removed.end());
  csv::Writer w;
  w.row("user_id", "events", "removed");
  for (std::size_t u = 0; u < es.user_count(); ++u) {
    w.row(es.users()[u], es.user_events(u).size(), removed.count(es.users()[u]) ? "true" : "false");
  }
  ws.info("bot filter removed " + std::to_string(res.removed.size()) + " of " + std::to_string(es.user_count()) +
          " users");
  if (res.kept.empty()) throw Error("filter removed every user");
  ws.write("filter.csv", w.str());
}

inline void bin(const Workspace& ws) {
  ws.write("bins.csv", bins_to_csv(build_bins(load_kept(ws), ws.cfg.periods)));
}

inline void summarize(const Workspace& ws) {
  const auto es = load_kept(ws);
  const auto bins = bins_from_csv(ws.read("bins.csv"));
  if (bins.boundaries.empty() || bins.boundaries.back() != es.size()) {
    throw ValidationError("bins.csv does not match the filtered event set");
  }
  const auto m = trajektor::summarize(es, bins, ws.cfg.rule);
  ws.write("observations.csv", observations_to_csv(m, ws.cfg.labels));
  ws.write("counts.csv", counts_to_csv(m, ws.cfg.labels));
}

inline void partition(const Workspace& ws) {
  const auto p = pre_separate(load_observations(ws));
  ws.info("pre-separation: " + std::to_string(p.none_only.size()) + " none-only, " +
          std::to_string(p.none_implicit_only.size()) + " none+implicit-only, " + std::to_string(p.modeled.size()) +
          " modeled");
  ws.write("partition.csv", partition_to_csv(p));
}

inline ObservationMatrix modeled_matrix(const Workspace& ws) {
  const auto obs = load_observations(ws);
  const auto part = load_partition(ws, obs);
  if (part.modeled.empty()) throw Error("no user has events of the strongest classes; nothing to model");
  return obs.subset(part.modeled_rows);
}

inline void fit(const Workspace& ws) {
  const auto obs = modeled_matrix(ws);
  const auto& c = ws.cfg;
  nlohmann::ordered_json fits = nlohmann::ordered_json::array();
  std::vector<std::pair<FitResult, InformationCriteria>> results;
  for (std::size_t K = c.states_min; K <= c.states_max; ++K) {
    auto r = em_fit(obs, K, c.em);
    const auto ic = information_criteria(r, obs.user_count());
    ws.info("EM K=" + std::to_string(K) + ": loglik " + format_double(r.loglik) + " after " +
            std::to_string(r.iterations) + " iterations" + (r.converged ? "" : " (not converged)"));
    results.emplace_back(std::move(r), ic);
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < results.size(); ++i) {
    const auto score = [&](std::size_t j) {
      return c.select == Criterion::aic ? results[j].second.aic : results[j].second.bic;
    };
    if (score(i) < score(best)) best = i;
  }
  csv::Writer w;
  w.row("states", "loglik", "parameters", "aic", "bic", "iterations", "converged", "degenerate", "selected");
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& [r, ic] = results[i];
    w.row(r.model.states(), r.loglik, ic.parameters, ic.aic, ic.bic, r.iterations, r.converged ? "true" : "false",
          r.degenerate ? "true" : "false", i == best ? "true" : "false");
    nlohmann::ordered_json f;
    f["states"] = r.model.states();
    f["selected"] = i == best;
    f["restart_logliks"] = r.restart_logliks;
    f["model"] = model_to_json(r.model, r.seed, r.loglik);
    fits.push_back(std::move(f));
  }
  ws.write("model_selection.csv", w.str());
  ws.write("fits.json", fits.dump(2) + "\n");
}

inline void decode(const Workspace& ws) {
  const auto fits = nlohmann::json::parse(ws.read("fits.json"));
  const nlohmann::json* chosen = nullptr;
  for (const auto& f : fits) {
    if (f.at("selected").get<bool>()) chosen = &f;
  }
  if (!chosen) throw ValidationError("fits.json: no selected model");
  const auto stored = model_from_json(chosen->at("model"));
  ws.write("model.json", model_to_json(stored.model, stored.seed, stored.loglik).dump(2) + "\n");
  const auto obs = modeled_matrix(ws);
  ws.write("states.csv", trajectories_to_csv(trajektor::decode(stored.model, obs, ws.cfg.decode)));
}

inline void cluster(const Workspace& ws) {
  const auto trajs = trajectories_from_csv(ws.read("states.csv"));
  const auto c = kmodes_fit(trajs, ws.cfg.clusters, ws.cfg.kmodes);
  ws.info("k-modes k=" + std::to_string(c.k) + ": WSS " + std::to_string(c.wss));
  ws.write("modes.csv", modes_to_csv(c));
  ws.write("clusters.csv", assignment_to_csv(c, ids_of(trajs)));
}

inline void wss(const Workspace& ws) {
  const auto data = bare(trajectories_from_csv(ws.read("states.csv")));
  const auto curve = wss_curve(data, ws.cfg.wss_min, ws.cfg.wss_max, ws.cfg.kmodes);
  const std::size_t knee = curve.size() >= 3 ? elbow(curve) : 0;
  csv::Writer w;
  w.row("k", "wss", "under_restarted", "elbow");
  for (const auto& p : curve) {
    w.row(p.k, p.wss, p.under_restarted ? "true" : "false", p.k == knee ? "true" : "false");
  }
  if (knee) ws.info("WSS elbow at k=" + std::to_string(knee));
  ws.write("wss.csv", w.str());
}

struct ClusterInputs {
  ObservationMatrix obs;
  Partition part;
  std::vector<StateTrajectory> trajs;
  Clustering clustering;
};

inline ClusterInputs load_clusters(const Workspace& ws) {
  ClusterInputs in;
  in.obs = load_observations(ws);
  in.part = load_partition(ws, in.obs);
  in.trajs = trajectories_from_csv(ws.read("states.csv"));
  if (ids_of(in.trajs) != in.part.modeled) throw ValidationError("states.csv does not cover the modeled users");
  in.clustering = clustering_from_csv(ws.read("modes.csv"), ws.read("clusters.csv"), in.trajs);
  return in;
}

inline void tscores(const Workspace& ws) {
  const auto in = load_clusters(ws);
  const auto s = cluster_tscores(in.obs, in.part, in.part.modeled, in.clustering, ws.cfg.modeled_cohort);
  ws.write("cluster_tscore.csv", tscore_to_csv(s, ws.cfg.labels));
  ws.write("cluster_tscore_diff.csv", differenced_to_csv(difference(s), ws.cfg.labels));
}

inline void types(const Workspace& ws) {
  const auto in = load_clusters(ws);
  const auto s = tscore_from_csv(ws.read("cluster_tscore.csv"), ws.cfg.labels);
  std::vector<ClusterProfile> profiles;
  const auto t = assign_types(in.part, in.part.modeled, in.clustering, s, ws.cfg.naming, &profiles);
  csv::Writer w;
  w.row("cluster_id", "users", "type", "provenance", "trend_slope", "relative_trend", "mean_combined_tscore");
  const auto sizes = in.clustering.sizes();
  for (const auto& p : profiles) {
    w.row(p.cluster, sizes[p.cluster - 1], std::string(type_name(p.type)), std::string(provenance_name(p.provenance)),
          p.trend_slope, p.relative_trend, p.mean_combined);
  }
  ws.write("types.csv", types_to_csv(t));
  ws.write("cluster_profiles.csv", w.str());
}

inline void summaries(const Workspace& ws) {
  const auto es = load_kept(ws);
  const auto t = types_from_csv(ws.read("types.csv"));
  ws.write("type_summary.csv", type_summary_to_csv(type_summary(es, t), ws.cfg.labels));
  ws.write("gini.csv", gini_to_csv(gini_report(cohort_stats(es)), ws.cfg.labels));
  const auto s = tscore(load_observations(ws), t);
  ws.write("type_tscore.csv", tscore_to_csv(s, ws.cfg.labels));
  ws.write("type_tscore_diff.csv", differenced_to_csv(difference(s), ws.cfg.labels));
}

inline void significance(const Workspace& ws) {
  const auto es = load_kept(ws);
  const auto cohort = cohort_stats(es);
  const auto by_user = types_from_csv(ws.read("types.csv")).by_user();
  const std::size_t L = ws.cfg.labels.size();
  // samples[type][label or L for combined] = per-user counts
  std::map<UserType, std::vector<std::vector<double>>> samples;
  for (std::size_t u = 0; u < es.user_count(); ++u) {
    const auto it = by_user.find(es.users()[u]);
    if (it == by_user.end()) throw ValidationError("types.csv: user '" + es.users()[u] + "' has no type");
    auto& rows = samples[it->second];
    rows.resize(L + 1);
    double combined = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      const auto n = static_cast<double>(cohort.user_label_counts[u][l]);
      rows[l].push_back(n);
      if (l > 0) combined += n;
    }
    rows[L].push_back(combined);
  }
  std::vector<std::string> names;
  std::vector<const std::vector<std::vector<double>>*> per_type;
  for (auto t : kAllUserTypes) {
    if (auto it = samples.find(t); it != samples.end()) {
      names.emplace_back(type_name(t));
      per_type.push_back(&it->second);
    }
  }
  csv::Writer w;
  w.row("label", "group_a", "group_b", "statistic", "p_value", "method");
  if (per_type.size() >= 2 && es.user_count() >= 3) {
    for (std::size_t l = 0; l <= L; ++l) {
      const std::string label = l == L ? "combined" : ws.cfg.labels.name(static_cast<Label>(l));
      std::vector<std::vector<double>> groups;
      for (const auto* rows : per_type) groups.push_back((*rows)[l]);
      const auto kw = stats::kruskal_wallis(groups);
      w.row(label, "all", "", kw.statistic, kw.p_value, std::string(stats::method_name(kw.method)));
      const auto pw = stats::pairwise_wilcoxon(groups, ws.cfg.rank_test, ws.cfg.bonferroni);
      for (std::size_t i = 0; i < groups.size(); ++i) {
        for (std::size_t j = i + 1; j < groups.size(); ++j) {
          w.row(label, names[i], names[j], pw[i][j].statistic, pw[i][j].p_value,
                std::string(stats::method_name(pw[i][j].method)));
        }
      }
    }
  }
  ws.write("stats.csv", w.str());
}

}  // namespace stages

inline const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> list{
      {"ingest", {"events.csv"}, stages::ingest},
      {"filter", {"filter.csv"}, stages::filter},
      {"bin", {"bins.csv"}, stages::bin},
      {"summarize", {"observations.csv", "counts.csv"}, stages::summarize},
      {"pre-separate", {"partition.csv"}, stages::partition},
      {"em-fit", {"model_selection.csv", "fits.json"}, stages::fit},
      {"decode", {"model.json", "states.csv"}, stages::decode},
      {"cluster", {"modes.csv", "clusters.csv"}, stages::cluster},
      {"wss-curve", {"wss.csv"}, stages::wss},
      {"tscore", {"cluster_tscore.csv", "cluster_tscore_diff.csv"}, stages::tscores},
      {"types", {"types.csv", "cluster_profiles.csv"}, stages::types},
      {"summaries", {"type_summary.csv", "gini.csv", "type_tscore.csv", "type_tscore_diff.csv"}, stages::summaries},
      {"stats", {"stats.csv"}, stages::significance},
  };
  return list;
}

inline const Stage& stage_named(std::string_view name) {
  for (const auto& s : all_stages()) {
    if (name == s.name) return s;
  }
  throw ValidationError("unknown stage '" + std::string(name) + "'");
}

// --- run directory lock ------------------------------------------------------

inline constexpr const char* kLockName = ".trajektor.lock";

// Exclusive lock on a run directory, held for the object's lifetime.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / kLockName) {
    std::FILE* f = std::fopen(path_.string().c_str(), "wx");
    if (!f) {
      throw ValidationError("output directory '" + dir.string() + "' is locked by another run (remove " +
                            path_.string() + " if that run is gone)");
    }
    std::fputs("trajektor run in progress\n", f);
    std::fclose(f);
  }
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
};

// --- driver ------------------------------------------------------------------

enum ExitCode : int { kSuccess = 0, kValidation = 2, kStageFailure = 3 };

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Runs `names` in order against `ws`, maintaining manifest.json when
// `manifest` is set. Errors propagate after the manifest records them.
inline void run_stages(const Workspace& ws, const Settings& settings, const std::vector<std::string>& names,
                       bool manifest) {
  nlohmann::ordered_json m;
  m["tool"] = "trajektor";
  m["version"] = TRAJEKTOR_VERSION;
  nlohmann::ordered_json snapshot;
  for (const auto& [k, v] : settings.values()) snapshot[k] = v;
  m["config"] = snapshot;
  m["seeds"] = {{"root", ws.cfg.seed}, {"em", ws.cfg.em.seed}, {"kmodes", ws.cfg.kmodes.seed}};
  if (!ws.cfg.input.empty() && fs::is_regular_file(ws.cfg.input)) {
    m["input_sha256"] = sha256_hex(csv::read_file(ws.cfg.input.string()));
  }
  m["stages"] = nlohmann::ordered_json::array();
  m["status"] = "running";
  m["failed_stage"] = nullptr;
  m["error"] = nullptr;
  const auto flush = [&] {
    if (manifest) ws.write("manifest.json", m.dump(2) + "\n");
  };
  for (const auto& name : names) {
    const Stage& st = stage_named(name);
    nlohmann::ordered_json entry;
    entry["name"] = st.name;
    if (ws.cfg.record_timestamps) entry["started"] = utc_now();
    ws.info("stage " + std::string(st.name));
    try {
      st.run(ws);
    } catch (const std::exception& e) {
      entry["status"] = "failed";
      m["stages"].push_back(entry);
      m["status"] = "failed";
      m["failed_stage"] = st.name;
      m["error"] = e.what();
      flush();
      throw;
    }
    entry["status"] = "ok";
    if (ws.cfg.record_timestamps) entry["finished"] = utc_now();
    nlohmann::ordered_json arts = nlohmann::ordered_json::array();
    for (const char* a : st.artifacts) arts.push_back({{"file", a}, {"sha256", sha256_hex(ws.read(a))}});
    entry["artifacts"] = arts;
    m["stages"].push_back(entry);
    flush();
  }
  m["status"] = "ok";
  flush();
}

inline std::vector<std::string> stage_names() {
  std::vector<std::string> out;
  for (const auto& s : all_stages()) out.emplace_back(s.name);
  return out;
}

// Runs the named stages against `out` under the directory lock and maps
// failures to exit codes. A full run (`manifest`) first clears artifacts left
// by an earlier run so a partial rerun never mixes generations.
inline int execute(const Settings& settings, const fs::path& out, const std::vector<std::string>& names,
                   bool manifest, const LogSink& log = {}, std::string* error_out = nullptr) {
  const auto fail = [&](int code, const std::string& msg) {
    if (log) log(LogLevel::warn, msg);
    if (error_out) *error_out = msg;
    return code;
  };
  try {
    const bool needs_input = std::find(names.begin(), names.end(), "ingest") != names.end();
    Workspace ws{out, resolve(settings, needs_input), log};
    for (const auto& n : names) stage_named(n);
    fs::create_directories(out);
    DirectoryLock lock(out);
    if (manifest) {
      for (const auto& s : all_stages()) {
        for (const char* a : s.artifacts) fs::remove(out / a);
      }
      fs::remove(out / "manifest.json");
    }
    run_stages(ws, settings, names, manifest);
  } catch (const ValidationError& e) {
    return fail(kValidation, e.what());
  } catch (const std::exception& e) {
    return fail(kStageFailure, e.what());
  }
  return kSuccess;
}

// Full pipeline into `out`; returns the process exit code.
inline int cmd_run(const Settings& settings, const fs::path& out, const LogSink& log = {},
                   std::string* error_out = nullptr) {
  return execute(settings, out, stage_names(), true, log, error_out);
}

}  // namespace trajektor::pipeline
