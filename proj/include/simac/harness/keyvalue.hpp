#pragma once

// Flat key=value configuration text.
//
//   # comment
//   eta = 16/255
//   tap_layers = 4,5
//
// Numbers accept rational literals "a/b". Booleans accept true/false/1/0.
// A schema binds keys to typed fields; unknown keys are rejected.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace simac::harness {

class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

/// Ordered (key, raw value) pairs; duplicate keys are an error.
inline std::vector<std::pair<std::string, std::string>> parse_pairs(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw config_error("line " + std::to_string(line_no) + ": expected key = value");
    auto key = trim(std::string_view(body).substr(0, eq));
    auto value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw config_error("line " + std::to_string(line_no) + ": empty key");
    for (auto& [k, v] : out)
      if (k == key) throw config_error("duplicate key '" + key + "'");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline double parse_number(const std::string& key, const std::string& raw) {
  auto one = [&](std::string_view s) {
    double v = 0.0;
    const auto t = trim(s);
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || t.empty())
      throw config_error("key '" + key + "': '" + raw + "' is not a number");
    return v;
  };
  const auto slash = raw.find('/');
  double v = slash == std::string::npos ? one(raw) : one(std::string_view(raw).substr(0, slash)) /
                                                        one(std::string_view(raw).substr(slash + 1));
  if (!std::isfinite(v)) throw config_error("key '" + key + "': value must be finite");
  return v;
}

inline long long parse_integer(const std::string& key, const std::string& raw) {
  long long v = 0;
  auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
  if (ec != std::errc() || p != raw.data() + raw.size() || raw.empty())
    throw config_error("key '" + key + "': '" + raw + "' is not an integer");
  return v;
}

inline std::uint64_t parse_unsigned(const std::string& key, const std::string& raw) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
  if (ec != std::errc() || p != raw.data() + raw.size() || raw.empty())
    throw config_error("key '" + key + "': '" + raw + "' is not an unsigned integer");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& raw) {
  if (raw == "true" || raw == "1") return true;
  if (raw == "false" || raw == "0") return false;
  throw config_error("key '" + key + "': '" + raw + "' is not a boolean");
}

inline std::vector<std::string> split_list(const std::string& raw) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  if (trim(raw).empty()) return out;
  while (true) {
    const auto c = raw.find(',', pos);
    out.push_back(trim(std::string_view(raw).substr(pos, c == std::string::npos ? std::string::npos : c - pos)));
    if (c == std::string::npos) break;
    pos = c + 1;
  }
  return out;
}

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    double back = 0.0;
    std::from_chars(buf, buf + std::char_traits<char>::length(buf), back);
    if (back == v) break;
  }
  return buf;
}

using FieldRef = std::variant<int*, long*, std::uint64_t*, double*, bool*, std::string*, std::vector<int>*,
                              std::vector<double>*, std::vector<std::string>*>;

struct Field {
  std::string key;
  FieldRef target;
  bool required = false;
};

using Schema = std::vector<Field>;

inline void assign_field(const Field& f, const std::string& raw) {
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, int>) {
          const auto v = parse_integer(f.key, raw);
          if (v < INT32_MIN || v > INT32_MAX) throw config_error("key '" + f.key + "': out of range");
          *p = static_cast<int>(v);
        } else if constexpr (std::is_same_v<T, long>) {
          *p = static_cast<long>(parse_integer(f.key, raw));
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
          *p = parse_unsigned(f.key, raw);
        } else if constexpr (std::is_same_v<T, double>) {
          *p = parse_number(f.key, raw);
        } else if constexpr (std::is_same_v<T, bool>) {
          *p = parse_bool(f.key, raw);
        } else if constexpr (std::is_same_v<T, std::string>) {
          *p = raw;
        } else if constexpr (std::is_same_v<T, std::vector<int>>) {
          p->clear();
          for (auto& item : split_list(raw)) {
            const auto v = parse_integer(f.key, item);
            if (v < INT32_MIN || v > INT32_MAX) throw config_error("key '" + f.key + "': out of range");
            p->push_back(static_cast<int>(v));
          }
        } else if constexpr (std::is_same_v<T, std::vector<double>>) {
          p->clear();
          for (auto& item : split_list(raw)) p->push_back(parse_number(f.key, item));
        } else {
          *p = split_list(raw);
        }
      },
      f.target);
}

inline std::string render_field(const Field& f) {
  return std::visit(
      [](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, double>) {
          return format_double(*p);
        } else if constexpr (std::is_same_v<T, bool>) {
          return *p ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::string>) {
          return *p;
        } else if constexpr (std::is_same_v<T, std::vector<int>> || std::is_same_v<T, std::vector<double>> ||
                             std::is_same_v<T, std::vector<std::string>>) {
          std::string s;
          for (std::size_t i = 0; i < p->size(); ++i) {
            if (i) s += ',';
            if constexpr (std::is_same_v<T, std::vector<double>>)
              s += format_double((*p)[i]);
            else if constexpr (std::is_same_v<T, std::vector<int>>)
              s += std::to_string((*p)[i]);
            else
              s += (*p)[i];
          }
          return s;
        } else {
          return std::to_string(*p);
        }
      },
      f.target);
}

/// Applies text to a schema. Unknown keys and missing required keys are errors.
inline void load_into(const Schema& schema, std::string_view text) {
  const auto pairs = parse_pairs(text);
  for (auto& [k, v] : pairs) {
    const Field* f = nullptr;
    for (auto& cand : schema)
      if (cand.key == k) f = &cand;
    if (!f) throw config_error("unknown key '" + k + "'");
    assign_field(*f, v);
  }
  for (auto& f : schema) {
    if (!f.required) continue;
    bool found = false;
    for (auto& [k, v] : pairs) found |= k == f.key;
    if (!found) throw config_error("missing required key '" + f.key + "'");
  }
}

/// Canonical text: schema order, one "key = value" per line.
inline std::string dump_schema(const Schema& schema) {
  std::string out;
  for (auto& f : schema) out += f.key + " = " + render_field(f) + "\n";
  return out;
}

}  // namespace simac::harness
