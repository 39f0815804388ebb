// Minimal TOML subset: [section] headers, key = value lines, # comments.
// Values: booleans, integers, floats, double-quoted strings, and flat arrays
// of numbers. That covers the run configs; nested tables and dates are out.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace spikeforge {

struct TomlValue {
  enum class Kind { kBool, kInt, kFloat, kString, kArray };
  Kind kind = Kind::kInt;
  bool b = false;
  int64_t i = 0;
  double f = 0.0;
  std::string s;
  std::vector<double> array;
  std::vector<bool> array_is_int;  // per element, for exactness checks
};

class TomlDoc {
 public:
  static TomlDoc parse(const std::string& text);
  static TomlDoc parse_file(const std::string& path);

  // Keys are dotted: "train.lr". Lookups with a default never throw on a
  // missing key but do throw on a type mismatch.
  bool has(const std::string& key) const;
  bool get_bool(const std::string& key, bool fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_float(const std::string& key, double fallback) const;  // accepts ints
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::vector<int64_t> get_int_array(const std::string& key,
                                     const std::vector<int64_t>& fallback) const;
  std::vector<double> get_float_array(const std::string& key,
                                      const std::vector<double>& fallback) const;

  const std::map<std::string, TomlValue>& entries() const { return entries_; }

 private:
  const TomlValue* find(const std::string& key) const;
  std::map<std::string, TomlValue> entries_;
};

}  // namespace spikeforge
