#include "spikeforge/toml.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace spikeforge {

namespace {

[[noreturn]] void fail(int line, const std::string& what) {
  throw std::runtime_error("config line " + std::to_string(line) + ": " + what);
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Cuts a trailing comment, respecting double-quoted strings.
std::string strip_comment(const std::string& s) {
  bool in_string = false;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_string = !in_string;
    if (s[i] == '#' && !in_string) return s.substr(0, i);
  }
  return s;
}

bool looks_like_int(const std::string& t) {
  size_t i = (t[0] == '+' || t[0] == '-') ? 1 : 0;
  if (i >= t.size()) return false;
  for (; i < t.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(t[i]))) return false;
  return true;
}

TomlValue parse_scalar(const std::string& raw, int line) {
  TomlValue v;
  const std::string t = trim(raw);
  if (t.empty()) fail(line, "missing value");
  if (t == "true" || t == "false") {
    v.kind = TomlValue::Kind::kBool;
    v.b = (t == "true");
    return v;
  }
  if (t.front() == '"') {
    if (t.size() < 2 || t.back() != '"') fail(line, "unterminated string");
    v.kind = TomlValue::Kind::kString;
    v.s = t.substr(1, t.size() - 2);
    return v;
  }
  if (looks_like_int(t)) {
    v.kind = TomlValue::Kind::kInt;
    try {
      v.i = std::stoll(t);
    } catch (const std::exception&) {
      fail(line, "integer out of range: " + t);
    }
    v.f = double(v.i);
    return v;
  }
  try {
    size_t used = 0;
    v.f = std::stod(t, &used);
    if (used != t.size()) fail(line, "cannot parse value: " + t);
  } catch (const std::exception&) {
    fail(line, "cannot parse value: " + t);
  }
  v.kind = TomlValue::Kind::kFloat;
  return v;
}

TomlValue parse_value(const std::string& raw, int line) {
  const std::string t = trim(raw);
  if (!t.empty() && t.front() == '[') {
    if (t.back() != ']') fail(line, "unterminated array");
    TomlValue v;
    v.kind = TomlValue::Kind::kArray;
    const std::string inner = t.substr(1, t.size() - 2);
    std::string item;
    std::stringstream ss(inner);
    while (std::getline(ss, item, ',')) {
      const std::string it = trim(item);
      if (it.empty()) {
        if (trim(inner).empty()) break;  // empty array
        fail(line, "empty array element");
      }
      TomlValue e = parse_scalar(it, line);
      if (e.kind != TomlValue::Kind::kInt && e.kind != TomlValue::Kind::kFloat)
        fail(line, "arrays hold numbers only");
      v.array.push_back(e.kind == TomlValue::Kind::kInt ? double(e.i) : e.f);
      v.array_is_int.push_back(e.kind == TomlValue::Kind::kInt);
    }
    return v;
  }
  return parse_scalar(raw, line);
}

bool valid_key_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

}  // namespace

TomlDoc TomlDoc::parse(const std::string& text) {
  TomlDoc doc;
  std::stringstream ss(text);
  std::string raw;
  std::string section;
  int line = 0;
  while (std::getline(ss, raw)) {
    ++line;
    const std::string s = trim(strip_comment(raw));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') fail(line, "unterminated section header");
      section = trim(s.substr(1, s.size() - 2));
      if (section.empty()) fail(line, "empty section name");
      for (char c : section)
        if (!valid_key_char(c)) fail(line, "bad section name: " + section);
      continue;
    }
    const size_t eq = s.find('=');
    if (eq == std::string::npos) fail(line, "expected key = value");
    const std::string key = trim(s.substr(0, eq));
    if (key.empty()) fail(line, "empty key");
    for (char c : key)
      if (!valid_key_char(c)) fail(line, "bad key: " + key);
    const std::string dotted = section.empty() ? key : section + "." + key;
    if (doc.entries_.count(dotted)) fail(line, "duplicate key: " + dotted);
    doc.entries_[dotted] = parse_value(s.substr(eq + 1), line);
  }
  return doc;
}

TomlDoc TomlDoc::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const TomlValue* TomlDoc::find(const std::string& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

bool TomlDoc::has(const std::string& key) const { return find(key) != nullptr; }

bool TomlDoc::get_bool(const std::string& key, bool fallback) const {
  const TomlValue* v = find(key);
  if (!v) return fallback;
  if (v->kind != TomlValue::Kind::kBool) throw std::runtime_error(key + " must be a boolean");
  return v->b;
}

int64_t TomlDoc::get_int(const std::string& key, int64_t fallback) const {
  const TomlValue* v = find(key);
  if (!v) return fallback;
  if (v->kind != TomlValue::Kind::kInt) throw std::runtime_error(key + " must be an integer");
  return v->i;
}

double TomlDoc::get_float(const std::string& key, double fallback) const {
  const TomlValue* v = find(key);
  if (!v) return fallback;
  if (v->kind == TomlValue::Kind::kInt) return double(v->i);
  if (v->kind != TomlValue::Kind::kFloat) throw std::runtime_error(key + " must be a number");
  return v->f;
}

std::string TomlDoc::get_string(const std::string& key, const std::string& fallback) const {
  const TomlValue* v = find(key);
  if (!v) return fallback;
  if (v->kind != TomlValue::Kind::kString) throw std::runtime_error(key + " must be a string");
  return v->s;
}

std::vector<int64_t> TomlDoc::get_int_array(const std::string& key,
                                            const std::vector<int64_t>& fallback) const {
  const TomlValue* v = find(key);
  if (!v) return fallback;
  if (v->kind != TomlValue::Kind::kArray) throw std::runtime_error(key + " must be an array");
  std::vector<int64_t> out;
  for (size_t i = 0; i < v->array.size(); ++i) {
    if (!v->array_is_int[i]) throw std::runtime_error(key + " must hold integers");
    out.push_back(int64_t(v->array[i]));
  }
  return out;
}

std::vector<double> TomlDoc::get_float_array(const std::string& key,
                                             const std::vector<double>& fallback) const {
  const TomlValue* v = find(key);
  if (!v) return fallback;
  if (v->kind != TomlValue::Kind::kArray) throw std::runtime_error(key + " must be an array");
  return v->array;
}

}  // namespace spikeforge
