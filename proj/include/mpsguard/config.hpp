#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpsguard/errors.hpp"

namespace mpsguard {

using Json = nlohmann::json;

/// Read-only view of one JSON object with a field path for error messages.
class ConfigView {
 public:
  ConfigView(const Json& j, std::string path) : j_(&j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_, "expected an object");
  }

  const std::string& path() const noexcept { return path_; }
  const Json& json() const noexcept { return *j_; }
  bool has(const std::string& key) const { return j_->contains(key); }
  std::string child(const std::string& key) const { return path_ + "." + key; }

  /// Rejects keys outside `allowed` so that typos surface instead of being ignored.
  void allow(std::initializer_list<const char*> allowed) const {
    for (auto it = j_->begin(); it != j_->end(); ++it) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || it.key() == a;
      if (!ok) throw ConfigError(child(it.key()), "unknown field");
    }
  }

  ConfigView section(const std::string& key) const {
    static const Json empty = Json::object();
    return has(key) ? ConfigView(j_->at(key), child(key)) : ConfigView(empty, child(key));
  }

  double number(const std::string& key, double def, double lo = -std::numeric_limits<double>::infinity(),
                double hi = std::numeric_limits<double>::infinity()) const {
    if (!has(key)) return def;
    return check_number(j_->at(key), child(key), lo, hi);
  }

  std::uint64_t count(const std::string& key, std::uint64_t def, std::uint64_t lo = 0) const {
    if (!has(key)) return def;
    return check_count(j_->at(key), child(key), lo);
  }

  std::optional<std::uint64_t> optional_count(const std::string& key) const {
    if (!has(key) || j_->at(key).is_null()) return std::nullopt;
    return check_count(j_->at(key), child(key), 0);
  }

  bool flag(const std::string& key, bool def) const {
    if (!has(key)) return def;
    if (!j_->at(key).is_boolean()) throw ConfigError(child(key), "expected true or false");
    return j_->at(key).get<bool>();
  }

  std::string text(const std::string& key, const std::string& def) const {
    if (!has(key)) return def;
    if (!j_->at(key).is_string()) throw ConfigError(child(key), "expected a string");
    return j_->at(key).get<std::string>();
  }

  std::string choice(const std::string& key, const std::string& def, std::initializer_list<const char*> options) const {
    const std::string v = text(key, def);
    for (const char* o : options)
      if (v == o) return v;
    std::string list;
    for (const char* o : options) list += std::string(list.empty() ? "" : ", ") + o;
    throw ConfigError(child(key), "'" + v + "' is not one of: " + list);
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> def, double lo, double hi) const {
    if (!has(key)) return def;
    const Json& a = array(key);
    std::vector<double> out;
    for (std::size_t i = 0; i < a.size(); ++i) out.push_back(check_number(a[i], item(key, i), lo, hi));
    return out;
  }

  std::vector<std::uint64_t> counts(const std::string& key, std::vector<std::uint64_t> def, std::uint64_t lo) const {
    if (!has(key)) return def;
    const Json& a = array(key);
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < a.size(); ++i) out.push_back(check_count(a[i], item(key, i), lo));
    return out;
  }

  std::vector<std::string> texts(const std::string& key, std::vector<std::string> def) const {
    if (!has(key)) return def;
    const Json& a = array(key);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!a[i].is_string()) throw ConfigError(item(key, i), "expected a string");
      out.push_back(a[i].get<std::string>());
    }
    return out;
  }

  std::string item(const std::string& key, std::size_t i) const { return child(key) + "[" + std::to_string(i) + "]"; }

 private:
  const Json& array(const std::string& key) const {
    const Json& a = j_->at(key);
    if (!a.is_array()) throw ConfigError(child(key), "expected an array");
    return a;
  }

  static double check_number(const Json& v, const std::string& path, double lo, double hi) {
    if (!v.is_number()) throw ConfigError(path, "expected a number");
    const double x = v.get<double>();
    if (!(x >= lo && x <= hi)) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "value %g outside [%g, %g]", x, lo, hi);
      throw ConfigError(path, buf);
    }
    return x;
  }

  static std::uint64_t check_count(const Json& v, const std::string& path, std::uint64_t lo) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      throw ConfigError(path, "expected a nonnegative integer");
    const auto x = v.get<std::uint64_t>();
    if (x < lo) throw ConfigError(path, "must be at least " + std::to_string(lo));
    return x;
  }

  const Json* j_;
  std::string path_;
};

inline Json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open config file");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path, std::string("invalid JSON: ") + e.what());
  }
}

/// FNV-1a of the compact dump with runtime-only fields removed.
inline std::uint64_t config_hash(Json j) {
  if (j.is_object()) {
    j.erase("workers");
    j.erase("out");
  }
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace mpsguard
