#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace substadj {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Identifies one independent random stream. Identical pairs reproduce the
/// same draws; child() derives further streams for sub-tasks of a replication.
struct SimSeed {
  std::uint64_t base_seed = 0;
  std::uint64_t stream_id = 0;

  SimSeed child(std::uint64_t tag) const {
    return {base_seed, detail::splitmix64(stream_id ^ detail::splitmix64(tag + 0x632BE59BD9B4E019ull))};
  }

  std::uint64_t key() const {
    return detail::splitmix64(detail::splitmix64(base_seed) ^ (stream_id * 0xD1B54A32D192ED03ull + 1));
  }
};

/// Engine plus distribution transforms written out explicitly so the
/// variates do not depend on the standard library's distribution classes.
class Rng {
 public:
  explicit Rng(SimSeed seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed.key()), static_cast<std::uint32_t>(seed.key() >> 32),
                      static_cast<std::uint32_t>(seed.base_seed), static_cast<std::uint32_t>(seed.stream_id),
                      static_cast<std::uint32_t>(seed.stream_id >> 32)};
    engine_.seed(seq);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on the open interval (0, 1) with 53 random bits.
  double uniform01() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform01()));
    const double theta = 2.0 * std::numbers::pi * uniform01();
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Laplace with scale b (variance 2 b^2).
  double laplace(double mean, double b) {
    const double u = uniform01() - 0.5;
    return mean - b * std::copysign(1.0, u) * std::log(1.0 - 2.0 * std::abs(u));
  }

  /// Uniform index in [0, n).
  std::uint64_t index(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace substadj
