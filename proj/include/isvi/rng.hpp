#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace isvi {

inline constexpr double kLogTwoPi = 1.8378770664093454836;
inline constexpr double kTwoPi = 6.2831853071795864769;

namespace detail {
// splitmix64, used to decorrelate nearby seeds and derive sub-streams
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

// Seeded generator with a fixed state-consumption contract: uniform() eats one
// engine draw, normal() eats exactly two (plain Box-Muller, no caching). Keeps
// traces reproducible no matter how calls interleave.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(detail::mix64(seed)) {}

  // independent sub-stream; (seed, stream_id) -> distinct engine state
  static RngStream substream(std::uint64_t seed, std::uint64_t stream_id) {
    return RngStream(detail::mix64(seed) ^ detail::mix64(stream_id + 0x517cc1b727220a95ULL));
  }

  // uniform on [0, 1)
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // standard normal draw
  double normal() {
    // u1 in (0, 1] so log(u1) is finite
    const double u1 = static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
    const double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  // integer in [0, n)
  std::uint64_t below(std::uint64_t n) { return engine_() % n; }

  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace isvi
