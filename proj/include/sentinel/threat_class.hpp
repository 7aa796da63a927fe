#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>

namespace sentinel {

enum class ThreatClass { Benign = 0, Volumetric = 1, Protocol = 2, Vulnerability = 3 };

inline constexpr std::size_t kClassCount = 4;

inline constexpr std::array<ThreatClass, kClassCount> kAllClasses = {
    ThreatClass::Benign, ThreatClass::Volumetric, ThreatClass::Protocol,
    ThreatClass::Vulnerability};

inline constexpr std::string_view to_string(ThreatClass c) {
  constexpr std::array<std::string_view, kClassCount> kNames = {"benign", "volumetric", "protocol",
                                                                "vulnerability"};
  return kNames[static_cast<std::size_t>(c)];
}

inline std::optional<ThreatClass> parse_threat_class(std::string_view name) {
  for (auto c : kAllClasses) {
    if (to_string(c) == name) return c;
  }
  return std::nullopt;
}

inline constexpr std::size_t index_of(ThreatClass c) { return static_cast<std::size_t>(c); }

}  // namespace sentinel
