#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trajektor/common.hpp"
#include "trajektor/csv.hpp"

namespace trajektor {

// The seven behavioral user types, in reporting order.
enum class UserType { none, very_low, low, high, very_high, escalating, de_escalating };

inline constexpr std::array<UserType, 7> kAllUserTypes = {UserType::none,      UserType::very_low,  UserType::low,
                                                          UserType::high,      UserType::very_high, UserType::escalating,
                                                          UserType::de_escalating};

inline std::string_view type_name(UserType t) {
  switch (t) {
    case UserType::none: return "None";
    case UserType::very_low: return "Very Low";
    case UserType::low: return "Low";
    case UserType::high: return "High";
    case UserType::very_high: return "Very High";
    case UserType::escalating: return "Escalating";
    case UserType::de_escalating: return "De-escalating";
  }
  return "?";
}

inline UserType parse_user_type(std::string_view s) {
  const std::string k = LabelVocabulary::lower(trim(s));
  for (auto t : kAllUserTypes) {
    if (LabelVocabulary::lower(type_name(t)) == k) return t;
  }
  if (k == "very_low" || k == "verylow") return UserType::very_low;
  if (k == "very_high" || k == "veryhigh") return UserType::very_high;
  if (k == "de_escalating" || k == "deescalating") return UserType::de_escalating;
  throw ValidationError("unknown user type '" + std::string(s) + "'");
}

enum class Provenance { rule, heuristic, manual_override };

inline std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::rule: return "rule";
    case Provenance::heuristic: return "heuristic";
    case Provenance::manual_override: return "manual_override";
  }
  return "?";
}

inline Provenance parse_provenance(std::string_view s) {
  if (s == "rule") return Provenance::rule;
  if (s == "heuristic") return Provenance::heuristic;
  if (s == "manual_override") return Provenance::manual_override;
  throw ValidationError("unknown provenance '" + std::string(s) + "'");
}

struct TypedUser {
  std::string user_id;
  UserType type = UserType::none;
  std::optional<std::size_t> cluster;  // 1-based cluster id for modeled users
  Provenance provenance = Provenance::rule;

  bool operator==(const TypedUser&) const = default;
};

struct TypeAssignment {
  std::vector<TypedUser> users;

  std::map<std::string, UserType> by_user() const {
    std::map<std::string, UserType> m;
    for (const auto& u : users) m.emplace(u.user_id, u.type);
    return m;
  }

  std::map<UserType, std::size_t> counts() const {
    std::map<UserType, std::size_t> m;
    for (const auto& u : users) ++m[u.type];
    return m;
  }
};

inline std::string types_to_csv(const TypeAssignment& t) {
  csv::Writer w;
  w.row("user_id", "type", "cluster_id", "provenance");
  for (const auto& u : t.users) {
    w.row(u.user_id, std::string(type_name(u.type)), u.cluster ? std::to_string(*u.cluster) : std::string(),
          std::string(provenance_name(u.provenance)));
  }
  return w.str();
}

inline TypeAssignment types_from_csv(std::string_view text) {
  const auto t = csv::parse_table(text, "types");
  const auto cu = t.column("user_id"), ct = t.column("type"), cc = t.column("cluster_id"),
             cp = t.column("provenance");
  TypeAssignment out;
  for (const auto& r : t.rows) {
    TypedUser u{r[cu], parse_user_type(r[ct]), std::nullopt, parse_provenance(r[cp])};
    if (!r[cc].empty()) u.cluster = static_cast<std::size_t>(parse_int(r[cc], "cluster_id"));
    out.users.push_back(std::move(u));
  }
  return out;
}

}  // namespace trajektor
