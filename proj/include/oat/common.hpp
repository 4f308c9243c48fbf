#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

#include <random>

namespace oat {

/// Raised when on-disk data (datasets, checkpoints, configs) is missing or malformed.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when a computation diverges (NaN loss, exploding values).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when image/patch dimensions are inconsistent.
class GeometryError : public std::invalid_argument {
 public:
  explicit GeometryError(const std::string& what) : std::invalid_argument(what) {}
};

/// Deterministic RNG. Doubles are derived from raw engine output with fixed
/// bit arithmetic so results do not depend on the standard library's
/// distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi], inclusive.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(gen_() % static_cast<uint64_t>(hi - lo + 1));
  }

  /// Derives an independent stream, e.g. one per episode or rollout.
  static Rng substream(uint64_t seed, uint64_t index) {
    // splitmix64 over the pair keeps nearby seeds uncorrelated
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
  }

  std::string save_state() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void restore_state(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
    if (!is) throw DataError("Rng: bad serialized state");
  }

 private:
  std::mt19937_64 gen_;
};

inline double clamp(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

/// FNV-1a 64-bit, used to stamp configs and data-order streams.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

}  // namespace oat
