#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "trajektor/common.hpp"

namespace trajektor::csv {

// Splits one CSV record. Supports double-quoted fields with "" escapes; does
// not support embedded newlines.
inline std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(std::move(field));
  return out;
}

inline std::string escape(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

// Accumulates rows; written in one shot so a failing stage never leaves a
// half-written file behind.
class Writer {
 public:
  template <typename... Cells>
  void row(const Cells&... cells) {
    bool first = true;
    ((append(cells, first)), ...);
    buf_ << '\n';
  }

  void row(const std::vector<std::string>& cells) {
    bool first = true;
    for (const auto& c : cells) append(c, first);
    buf_ << '\n';
  }

  std::string str() const { return buf_.str(); }

 private:
  void append(const std::string& s, bool& first) {
    if (!first) buf_ << ',';
    first = false;
    buf_ << escape(s);
  }
  void append(const char* s, bool& first) { append(std::string(s), first); }
  void append(double v, bool& first) { append(format_double(v), first); }
  template <typename I>
    requires std::is_integral_v<I>
  void append(I v, bool& first) {
    append(std::to_string(v), first);
  }

  std::ostringstream buf_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("write to '" + path + "' failed");
}

// Parsed table: header plus rows, with positional column lookup by name.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw ValidationError("missing column '" + std::string(name) + "'");
  }
};

inline Table parse_table(std::string_view text, const std::string& what) {
  Table t;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw ValidationError(what + ": expected " + std::to_string(t.header.size()) + " fields at line " +
                            std::to_string(line_no) + ", got " + std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw ValidationError(what + ": empty table");
  return t;
}

}  // namespace trajektor::csv
