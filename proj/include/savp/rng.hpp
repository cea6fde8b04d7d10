#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "savp/common.hpp"

namespace savp {

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t seed = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), seed);
}

// Deterministic random stream. Substreams are derived by hashing the master
// seed with a stream name so that data generation, init, training, and
// sampling draw from independent sequences.
class Rng {
 public:
  Rng() : engine_(0) {}
  explicit Rng(uint64_t seed) : engine_(seed) {}

  static Rng substream(uint64_t master_seed, const std::string& name) {
    uint64_t h = fnv1a64(name);
    h = fnv1a64(&master_seed, sizeof(master_seed), h);
    return Rng(h);
  }

  uint64_t next_u64() { return engine_(); }

  // Uniform in [lo, hi).
  double uniform(double lo = 0.0, double hi = 1.0) {
    double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }

  // Standard normal via Box-Muller. No cached spare: the engine is the
  // only state, which keeps serialization trivial.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Uniform integer in [0, n).
  int64_t index(int64_t n) {
    SAVP_CHECK(n > 0, "Rng::index requires n > 0, got ", n);
    return static_cast<int64_t>(engine_() % static_cast<uint64_t>(n));
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::string serialize() const {
    std::ostringstream oss;
    oss << engine_;
    return oss.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream iss(s);
    iss >> engine_;
    SAVP_CHECK(!iss.fail(), "Rng::deserialize: malformed state string");
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace savp
