#pragma once

#include <map>
#include <string>

#include "oat/common.hpp"

namespace oat {

/// Flat key = value configuration text. Lines starting with '#' and blank
/// lines are ignored; keys are unique; serialization is sorted so the config
/// hash is stable under reordering.
class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig parse_string(const std::string& text);
  static KvConfig parse_file(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int_or(const std::string& key, long long fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set_int(const std::string& key, long long v) { values_[key] = std::to_string(v); }
  void set_double(const std::string& key, double v);

  std::string serialize() const;
  void write_file(const std::string& path) const;

  /// FNV-1a over the canonical serialization; stamped into run summaries.
  uint64_t hash() const { return fnv1a64(serialize()); }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

std::string hex64(uint64_t v);

}  // namespace oat
