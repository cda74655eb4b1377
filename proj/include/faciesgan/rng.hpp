#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace faciesgan {

// Deterministic random stream. All transforms are implemented explicitly on
// top of mt19937_64 so that sequences do not depend on the standard library's
// distribution implementations; identical seeds give identical streams on
// every platform.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  // [0,1) with 53-bit resolution
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t integer(uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::integer: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = eng_();
    } while (v >= limit);
    return v % n;
  }

  // standard normal via Box-Muller (stateless: two uniforms per draw)
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <typename It>
  void shuffle(It first, It last) {
    const long n = static_cast<long>(last - first);
    for (long i = n - 1; i > 0; --i) {
      const long j = static_cast<long>(integer(static_cast<uint64_t>(i + 1)));
      std::swap(first[i], first[j]);
    }
  }

  // Independent child stream for item `index` of a generation job.
  static uint64_t subseed(uint64_t seed, uint64_t index) {
    uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
  }

  std::string serialize() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }
  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    if (is.fail()) throw std::runtime_error("Rng::deserialize: malformed state");
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace faciesgan
