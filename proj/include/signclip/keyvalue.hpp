#pragma once

// Plain-text `key = value` files and a small field table that maps keys onto
// struct members, shared by run configs and corpus metadata.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>

#include "signclip/tensor.hpp"

namespace signclip {

/// Parses `key = value` lines. Blank lines and lines whose first non-space
/// character is '#' are skipped. Malformed lines and repeated keys throw
/// ConfigError mentioning `source` and the line number.
std::map<std::string, std::string> parse_key_values(std::string_view text, std::string_view source);

Index parse_index(const std::string& key, const std::string& value);
double parse_real(const std::string& key, const std::string& value);
std::uint64_t parse_u64(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

/// Shortest round-trip decimal representation of a double.
std::string format_real(double v);

template <class T>
struct Field {
  const char* name;
  std::variant<Index T::*, double T::*, std::uint64_t T::*, bool T::*, std::string T::*> member;
  const char* doc;
};

template <class T>
std::string format_field(const T& obj, const Field<T>& f) {
  return std::visit(
      [&](auto ptr) -> std::string {
        using V = std::remove_cvref_t<decltype(obj.*ptr)>;
        if constexpr (std::is_same_v<V, double>) return format_real(obj.*ptr);
        else if constexpr (std::is_same_v<V, bool>) return obj.*ptr ? "true" : "false";
        else if constexpr (std::is_same_v<V, std::string>) return obj.*ptr;
        else return std::to_string(obj.*ptr);
      },
      f.member);
}

template <class T>
void assign_field(T& obj, const Field<T>& f, const std::string& value) {
  std::visit(
      [&](auto ptr) {
        using V = std::remove_cvref_t<decltype(obj.*ptr)>;
        if constexpr (std::is_same_v<V, double>) obj.*ptr = parse_real(f.name, value);
        else if constexpr (std::is_same_v<V, bool>) obj.*ptr = parse_bool(f.name, value);
        else if constexpr (std::is_same_v<V, std::string>) obj.*ptr = value;
        else if constexpr (std::is_same_v<V, std::uint64_t>) obj.*ptr = parse_u64(f.name, value);
        else obj.*ptr = parse_index(f.name, value);
      },
      f.member);
}

/// Writes every field as `name = value`, one per line, in table order.
template <class T>
std::string format_fields(const T& obj, std::span<const Field<T>> fields) {
  std::string out;
  for (const Field<T>& f : fields) out += std::string(f.name) + " = " + format_field(obj, f) + "\n";
  return out;
}

/// Applies matching entries of `values` and erases them from the map.
template <class T>
void take_fields(T& obj, std::span<const Field<T>> fields, std::map<std::string, std::string>& values) {
  for (const Field<T>& f : fields) {
    auto it = values.find(f.name);
    if (it == values.end()) continue;
    assign_field(obj, f, it->second);
    values.erase(it);
  }
}

}  // namespace signclip
