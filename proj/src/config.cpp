#include "oat/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace oat {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

KvConfig KvConfig::parse_string(const std::string& text) {
  KvConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos) throw DataError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw DataError("config line " + std::to_string(lineno) + ": empty key");
    cfg.values_[key] = value;
  }
  return cfg;
}

KvConfig KvConfig::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_string(ss.str());
}

const std::string& KvConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw DataError("config key missing: " + key);
  return it->second;
}

std::string KvConfig::get_or(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

long long KvConfig::get_int(const std::string& key) const {
  try {
    return std::stoll(get(key));
  } catch (const std::invalid_argument&) {
    throw DataError("config key " + key + " is not an integer");
  }
}

long long KvConfig::get_int_or(const std::string& key, long long fallback) const {
  return has(key) ? get_int(key) : fallback;
}

double KvConfig::get_double(const std::string& key) const {
  try {
    return std::stod(get(key));
  } catch (const std::invalid_argument&) {
    throw DataError("config key " + key + " is not a number");
  }
}

double KvConfig::get_double_or(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

void KvConfig::set_double(const std::string& key, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  values_[key] = buf;
}

std::string KvConfig::serialize() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
  return os.str();
}

void KvConfig::write_file(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write config: " + path);
  f << serialize();
}

std::string hex64(uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace oat
