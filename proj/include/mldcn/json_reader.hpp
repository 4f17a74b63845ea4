#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "mldcn/error.hpp"

namespace mldcn {

using json = nlohmann::json;

// Strict reader over one JSON object: every accessed key is remembered and
// finish() rejects anything left over. Errors name the full field path.
class JsonReader {
 public:
  JsonReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(ErrorCode::config, where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  // Marks an optional key as known without reading it.
  void mark(const std::string& key) { seen_.insert(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) fail(ErrorCode::config, field(key) + ": missing required field");
    return j_.at(key);
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  std::string get_string(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_string()) fail(ErrorCode::config, field(key) + ": expected a string");
    return v.get<std::string>();
  }

  std::string get_string(const std::string& key, const std::string& fallback) {
    seen_.insert(key);
    return has(key) ? get_string(key) : fallback;
  }

  std::uint64_t get_uint(const std::string& key) {
    const json& v = raw(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
    fail(ErrorCode::config, field(key) + ": expected a non-negative integer");
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) {
    seen_.insert(key);
    return has(key) ? get_uint(key) : fallback;
  }

  double get_double(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number()) fail(ErrorCode::config, field(key) + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(ErrorCode::config, field(key) + ": must be finite");
    return d;
  }

  double get_double(const std::string& key, double fallback) {
    seen_.insert(key);
    return has(key) ? get_double(key) : fallback;
  }

  bool get_bool(const std::string& key, bool fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_boolean()) fail(ErrorCode::config, field(key) + ": expected a boolean");
    return v.get<bool>();
  }

  const json& get_array(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array()) fail(ErrorCode::config, field(key) + ": expected an array");
    return v;
  }

  JsonReader object(const std::string& key) { return JsonReader(raw(key), field(key)); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) fail(ErrorCode::config, field(key) + ": unknown field");
    }
  }

  const std::string& path() const { return path_; }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::uint64_t json_uint(const json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
  fail(ErrorCode::config, path + ": expected a non-negative integer");
}

inline double json_double(const json& v, const std::string& path) {
  if (!v.is_number()) fail(ErrorCode::config, path + ": expected a number");
  return v.get<double>();
}

}  // namespace mldcn
