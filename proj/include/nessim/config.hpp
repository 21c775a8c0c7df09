#pragma once

// Experiment configuration files.
//
// Grammar (one item per line, leading/trailing blanks ignored):
//
//   line     := blank | comment | section | entry
//   comment  := ('#' | ';') any*
//   section  := '[' name ']'
//   entry    := key '=' value
//   key      := [A-Za-z0-9_]+
//
// Values are raw strings interpreted per key: integers, reals, booleans
// (true/false), words, comma-separated real lists, and potentials written
// as "coef:exponent, coef:exponent" (for example "1:4, 0.5:2").
// Keys may not repeat within a section; sections may not repeat. Every key
// must be known to the experiment, otherwise the file is rejected.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nessim/chain_model.hpp"
#include "nessim/errors.hpp"
#include "nessim/sde_dynamics.hpp"

namespace nessim {

struct IniEntry {
  std::string value;
  int line = 0;
  int column = 0;      // column of the value
  int key_column = 0;  // column of the key
};

struct IniSection {
  std::string name;
  int line = 0;
  std::vector<std::pair<std::string, IniEntry>> entries;  // file order

  const IniEntry* find(const std::string& key) const {
    for (const auto& [k, e] : entries)
      if (k == key) return &e;
    return nullptr;
  }
};

struct IniDocument {
  std::vector<IniSection> sections;

  const IniSection* find(const std::string& name) const {
    for (const auto& s : sections)
      if (s.name == name) return &s;
    return nullptr;
  }
};

namespace detail {
inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline bool valid_name(const std::string& s, bool allow_dash) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [&](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || (allow_dash && c == '-');
  });
}
}  // namespace detail

inline IniDocument parse_ini(std::istream& in) {
  IniDocument doc;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto first = raw.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const int col = static_cast<int>(first) + 1;
    const char c = raw[first];
    if (c == '#' || c == ';') continue;
    if (c == '[') {
      const auto close = raw.find(']', first);
      if (close == std::string::npos) throw ConfigError("unterminated section header", line_no, col);
      if (!detail::trim(raw.substr(close + 1)).empty())
        throw ConfigError("unexpected text after section header", line_no, static_cast<int>(close) + 2);
      const std::string name = detail::trim(raw.substr(first + 1, close - first - 1));
      if (!detail::valid_name(name, true)) throw ConfigError("invalid section name '" + name + "'", line_no, col + 1);
      if (doc.find(name)) throw ConfigError("duplicate section [" + name + "]", line_no, col);
      doc.sections.push_back(IniSection{name, line_no, {}});
      continue;
    }
    const auto eq = raw.find('=', first);
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line_no, col);
    const std::string key = detail::trim(raw.substr(first, eq - first));
    if (!detail::valid_name(key, false)) throw ConfigError("invalid key '" + key + "'", line_no, col);
    if (doc.sections.empty()) throw ConfigError("entry '" + key + "' outside of any section", line_no, col);
    auto& sec = doc.sections.back();
    if (sec.find(key)) throw ConfigError("duplicate key '" + key + "' in [" + sec.name + "]", line_no, col);
    const auto vstart = raw.find_first_not_of(" \t", eq + 1);
    const int vcol = vstart == std::string::npos ? static_cast<int>(raw.size()) + 1 : static_cast<int>(vstart) + 1;
    const std::string value = detail::trim(raw.substr(eq + 1));
    if (value.empty()) throw ConfigError("empty value for key '" + key + "'", line_no, vcol);
    sec.entries.emplace_back(key, IniEntry{value, line_no, vcol, col});
  }
  return doc;
}

inline IniDocument parse_ini_string(const std::string& text) {
  std::istringstream in(text);
  return parse_ini(in);
}

inline IniDocument parse_ini_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  return parse_ini(in);
}

/// Typed access to one section; remembers which keys were read so that the
/// leftovers can be rejected, and records the resolved value of every key.
class SectionReader {
 public:
  SectionReader(const IniDocument& doc, std::string name) : name_(std::move(name)), section_(doc.find(name_)) {}

  bool present() const noexcept { return section_ != nullptr; }
  const std::string& name() const noexcept { return name_; }

  std::optional<std::string> raw(const std::string& key) {
    used_.insert(key);
    if (!section_) return std::nullopt;
    const auto* e = section_->find(key);
    if (!e) return std::nullopt;
    return e->value;
  }

  std::string word(const std::string& key, const std::optional<std::string>& fallback,
                   const std::vector<std::string>& allowed = {}) {
    auto v = raw(key);
    if (!v) v = require_default(key, fallback);
    if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), *v) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      fail(key, "'" + *v + "' is not one of: " + list);
    }
    record(key, *v);
    return *v;
  }

  double real(const std::string& key, std::optional<double> fallback) {
    auto v = raw(key);
    double out = 0.0;
    if (!v) {
      if (!fallback) missing(key);
      out = *fallback;
    } else {
      out = parse_real(key, *v);
    }
    record(key, format_double(out));
    return out;
  }

  std::int64_t integer(const std::string& key, std::optional<std::int64_t> fallback) {
    auto v = raw(key);
    std::int64_t out = 0;
    if (!v) {
      if (!fallback) missing(key);
      out = *fallback;
    } else {
      out = parse_integer(key, *v);
    }
    record(key, std::to_string(out));
    return out;
  }

  std::uint64_t unsigned_integer(const std::string& key, std::optional<std::uint64_t> fallback) {
    auto v = raw(key);
    std::uint64_t out = 0;
    if (!v) {
      if (!fallback) missing(key);
      out = *fallback;
    } else {
      const auto* b = v->data();
      const auto* e = b + v->size();
      auto [ptr, ec] = std::from_chars(b, e, out);
      if (ec != std::errc() || ptr != e) fail(key, "'" + *v + "' is not a non-negative integer");
    }
    record(key, std::to_string(out));
    return out;
  }

  bool boolean(const std::string& key, bool fallback) {
    auto v = raw(key);
    bool out = fallback;
    if (v) {
      if (*v == "true") out = true;
      else if (*v == "false") out = false;
      else fail(key, "'" + *v + "' is not a boolean (true/false)");
    }
    record(key, out ? "true" : "false");
    return out;
  }

  std::vector<double> real_list(const std::string& key, std::optional<std::vector<double>> fallback) {
    auto v = raw(key);
    std::vector<double> out;
    if (!v) {
      if (!fallback) missing(key);
      out = *fallback;
    } else {
      std::stringstream ss(*v);
      std::string item;
      while (std::getline(ss, item, ',')) out.push_back(parse_real(key, detail::trim(item)));
      if (out.empty()) fail(key, "empty list");
    }
    std::string text;
    for (double x : out) text += (text.empty() ? "" : ", ") + format_double(x);
    record(key, text);
    return out;
  }

  std::vector<PotentialTerm> potential(const std::string& key) {
    auto v = raw(key);
    if (!v) missing(key);
    std::vector<PotentialTerm> out;
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = detail::trim(item);
      const auto colon = item.find(':');
      if (colon == std::string::npos) fail(key, "term '" + item + "' must be written coefficient:exponent");
      PotentialTerm t;
      t.coefficient = parse_real(key, detail::trim(item.substr(0, colon)));
      t.exponent = static_cast<int>(parse_integer(key, detail::trim(item.substr(colon + 1))));
      if (t.exponent < 2 || t.exponent % 2 != 0) fail(key, "exponent " + std::to_string(t.exponent) + " must be even and >= 2");
      out.push_back(t);
    }
    std::string text;
    for (const auto& t : out) text += (text.empty() ? "" : ", ") + format_double(t.coefficient) + ":" + std::to_string(t.exponent);
    record(key, text);
    return out;
  }

  /// Throws on the first key that was never read.
  void reject_unknown() const {
    if (!section_) return;
    for (const auto& [k, e] : section_->entries)
      if (!used_.count(k)) throw ConfigError("unknown key '" + k + "' in [" + name_ + "]", e.line, e.key_column);
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    const IniEntry* e = section_ ? section_->find(key) : nullptr;
    throw ConfigError("[" + name_ + "] " + key + ": " + msg, e ? e->line : 0, e ? e->column : 0);
  }

  const std::vector<std::pair<std::string, std::string>>& resolved() const noexcept { return resolved_; }

 private:
  std::string require_default(const std::string& key, const std::optional<std::string>& fallback) {
    if (!fallback) missing(key);
    return *fallback;
  }

  [[noreturn]] void missing(const std::string& key) const {
    throw ConfigError("missing required key '" + key + "' in [" + name_ + "]", section_ ? section_->line : 0, 1);
  }

  double parse_real(const std::string& key, const std::string& s) const {
    double out = 0.0;
    const auto* b = s.data();
    const auto* e = b + s.size();
    auto [ptr, ec] = std::from_chars(b, e, out);
    if (ec != std::errc() || ptr != e || !std::isfinite(out)) fail(key, "'" + s + "' is not a finite real number");
    return out;
  }

  std::int64_t parse_integer(const std::string& key, const std::string& s) const {
    std::int64_t out = 0;
    const auto* b = s.data();
    const auto* e = b + s.size();
    auto [ptr, ec] = std::from_chars(b, e, out);
    if (ec == std::errc() && ptr == e) return out;
    // allow integral reals such as 2e6
    double r = 0.0;
    auto [ptr2, ec2] = std::from_chars(b, e, r);
    if (ec2 == std::errc() && ptr2 == e && std::isfinite(r) && r == std::floor(r) && std::abs(r) < 9e18)
      return static_cast<std::int64_t>(r);
    fail(key, "'" + s + "' is not an integer");
  }

  void record(const std::string& key, std::string value) {
    for (auto& [k, v] : resolved_)
      if (k == key) {
        v = std::move(value);
        return;
      }
    resolved_.emplace_back(key, std::move(value));
  }

  std::string name_;
  const IniSection* section_;
  std::set<std::string> used_;
  std::vector<std::pair<std::string, std::string>> resolved_;
};

}  // namespace nessim
