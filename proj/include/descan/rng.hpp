#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace descan {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based generator: the i-th draw is a pure function of (key, i), so
// streams can be split by key without any shared state between them. The
// normal sampler is hand-written (Box-Muller) because the distributions in
// <random> are not reproducible across standard library implementations.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key = 0) noexcept : key_(splitmix64(key)) {}

  // Derive a key from any number of 64-bit components.
  template <class... Parts>
  static CounterRng keyed(std::uint64_t first, Parts... rest) noexcept {
    std::uint64_t k = splitmix64(first);
    ((k = splitmix64(k ^ splitmix64(static_cast<std::uint64_t>(rest) + 0x632be59bd9b4e019ULL))), ...);
    return CounterRng(k);
  }

  std::uint64_t next_u64() noexcept { return splitmix64(key_ ^ splitmix64(counter_++)); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace descan
