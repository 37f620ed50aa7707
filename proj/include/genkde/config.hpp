#pragma once

// Flat `key = value` configuration records and textual target specs.

#include <cctype>
#include <charconv>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "genkde/density.hpp"

namespace genkde {

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& is) {
    KeyValueConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto body = trim(line);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos)
        throw InvalidArgument("config line " + std::to_string(lineno) + ": expected key = value");
      const auto key = trim(body.substr(0, eq));
      if (key.empty()) throw InvalidArgument("config line " + std::to_string(lineno) + ": empty key");
      cfg.values_[key] = trim(body.substr(eq + 1));
    }
    return cfg;
  }

  static KeyValueConfig parse_string(const std::string& text) {
    std::istringstream is(text);
    return parse(is);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require_string(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw InvalidArgument("config: missing key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    return has(key) ? to_double(key, values_.at(key)) : fallback;
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const auto& s = values_.at(key);
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw InvalidArgument("config: '" + key + "' must be a non-negative integer, got '" + s + "'");
    return v;
  }

  /// Serializes in key order; two configs with the same entries produce the
  /// same text.
  std::string to_string() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  static double to_double(const std::string& key, const std::string& s) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
      throw InvalidArgument("config: '" + key + "' must be a finite number, got '" + s + "'");
    return v;
  }

  static std::string trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return std::string(s);
  }

 private:
  std::map<std::string, std::string> values_;
};

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(KeyValueConfig::trim(cur));
  return out;
}

/// 64-bit FNV-1a, used to fingerprint configuration text.
inline std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Target specs:
///   normal
///   ring:K:RADIUS:STD                      K equal-weight components on a circle
///   mixture:W,STD,MU1,...,MUl;W,STD,...    explicit isotropic components
inline TargetDistribution parse_target(const std::string& spec, std::size_t dim) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
  if (kind == "normal") return TargetDistribution::standard_normal(dim);
  if (kind == "ring") {
    const auto parts = split(rest, ':');
    require(parts.size() == 3, "target: ring needs K:RADIUS:STD");
    const auto k = static_cast<std::size_t>(KeyValueConfig::to_double("ring K", parts[0]));
    return TargetDistribution::ring(dim, k, KeyValueConfig::to_double("ring radius", parts[1]),
                                    KeyValueConfig::to_double("ring std", parts[2]));
  }
  if (kind == "mixture") {
    std::vector<MixtureComponent> comps;
    for (const auto& c : split(rest, ';')) {
      const auto f = split(c, ',');
      require(f.size() == dim + 2, "target: mixture component needs weight, std and " + std::to_string(dim) + " means");
      Vector mu(static_cast<Eigen::Index>(dim));
      for (std::size_t i = 0; i < dim; ++i) mu[static_cast<Eigen::Index>(i)] = KeyValueConfig::to_double("mean", f[i + 2]);
      comps.push_back({KeyValueConfig::to_double("weight", f[0]), mu, KeyValueConfig::to_double("std", f[1])});
    }
    return TargetDistribution::mixture(std::move(comps));
  }
  throw InvalidArgument("target: unknown spec '" + spec + "'");
}

/// Lossless inverse of parse_target.
inline std::string format_target(const TargetDistribution& t) {
  if (t.is_standard_normal()) return "normal";
  std::ostringstream os;
  os << std::setprecision(17) << "mixture:";
  bool first = true;
  for (const auto& c : t.components()) {
    if (!first) os << ';';
    first = false;
    os << c.weight << ',' << c.stddev;
    for (Eigen::Index i = 0; i < c.mean.size(); ++i) os << ',' << c.mean[i];
  }
  return os.str();
}

}  // namespace genkde
