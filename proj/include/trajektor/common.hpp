#pragma once

#include <charconv>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace trajektor {

// Base error for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition or input-validation failure (bad config, bad file, bad range).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Ordinal categorical value; index into a LabelVocabulary.
using Label = std::uint8_t;

// Ordered label vocabulary. Index 0 is the baseline class; higher indices are
// strictly "stronger" classes.
class LabelVocabulary {
 public:
  LabelVocabulary() : names_{"none", "implicit", "explicit"} {}

  explicit LabelVocabulary(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.size() < 2 || names_.size() > 32) {
      throw ValidationError("label vocabulary must hold between 2 and 32 labels");
    }
    for (auto& n : names_) n = lower(n);
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i].empty()) throw ValidationError("empty label name in vocabulary");
      for (std::size_t j = 0; j < i; ++j) {
        if (names_[i] == names_[j]) throw ValidationError("duplicate label '" + names_[i] + "'");
      }
    }
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(Label l) const { return names_.at(l); }
  const std::vector<std::string>& names() const { return names_; }

  // Case-insensitive lookup; returns size() when the token is unknown.
  std::size_t find(std::string_view token) const {
    const std::string t = lower(token);
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == t) return i;
    }
    return names_.size();
  }

  static std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) {
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
  }

  bool operator==(const LabelVocabulary&) const = default;

 private:
  std::vector<std::string> names_;
};

// Shortest decimal representation that round-trips exactly.
inline std::string format_double(double v) {
  if (v != v) return "nan";
  if (v == std::numeric_limits<double>::infinity()) return "inf";
  if (v == -std::numeric_limits<double>::infinity()) return "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& what) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ValidationError("cannot parse " + what + " '" + std::string(s) + "' as a number");
  }
  return v;
}

inline long long parse_int(std::string_view s, const std::string& what) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ValidationError("cannot parse " + what + " '" + std::string(s) + "' as an integer");
  }
  return v;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace trajektor
