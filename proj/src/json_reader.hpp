#pragma once

// Field-path aware reading of JSON config objects. Private to the library.

#include <cmath>
#include <limits>
#include <set>
#include <string>

#include <json.hpp>

#include "sentinel/error.hpp"
#include "sentinel/packet.hpp"

namespace sentinel::detail {

using nlohmann::json;

[[noreturn]] inline void invalid(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::InvalidConfig, path + ": " + what);
}

// Walks one JSON object, tracking the field path and rejecting unknown keys.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path, std::set<std::string> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) invalid(path_.empty() ? "$" : path_, "expected an object");
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!allowed.count(it.key())) invalid(field(it.key()), "unknown key");
    }
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }
  const json& at(const std::string& key) const {
    if (!has(key)) invalid(field(key), "required key missing");
    return j_.at(key);
  }

  std::uint64_t u64(const std::string& key, std::uint64_t max) const {
    const json& v = at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      invalid(field(key), "expected a nonnegative integer");
    }
    const auto x = v.get<std::uint64_t>();
    if (x > max) invalid(field(key), "value " + std::to_string(x) + " too large");
    return x;
  }
  template <typename T>
  void opt_uint(const std::string& key, T& out) const {
    if (has(key)) out = static_cast<T>(u64(key, std::numeric_limits<T>::max()));
  }

  // Seconds as a JSON number, stored as integer microseconds.
  std::int64_t seconds_us(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_number()) invalid(field(key), "expected a number of seconds");
    const double s = v.get<double>();
    if (!std::isfinite(s) || s < 0 || s > 1e6) invalid(field(key), "out of range");
    return std::llround(s * 1e6);
  }

  double number(const std::string& key, double lo, double hi) const {
    const json& v = at(key);
    if (!v.is_number()) invalid(field(key), "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x) || x < lo || x > hi) invalid(field(key), "out of range");
    return x;
  }

  bool boolean(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_boolean()) invalid(field(key), "expected true or false");
    return v.get<bool>();
  }

  Ipv4Addr addr(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_string()) invalid(field(key), "expected a dotted IPv4 string");
    auto a = parse_ipv4(v.get<std::string>());
    if (!a) invalid(field(key), "not a dotted IPv4 address");
    return *a;
  }

  std::string string(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_string()) invalid(field(key), "expected a string");
    return v.get<std::string>();
  }

 private:
  const json& j_;
  std::string path_;
};

}  // namespace sentinel::detail
