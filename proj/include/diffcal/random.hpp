#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace diffcal {

/// SplitMix64 finalizer. Used to turn structured ids (seed, sample index,
/// label hashes) into well-mixed stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Collapses (seed, parts...) into one stream seed. Streams derived from
/// distinct part tuples are statistically independent for our purposes.
inline std::uint64_t derive_stream_seed(std::uint64_t seed,
                                        std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t p : parts) {
    h = splitmix64(h ^ p);
  }
  return h;
}

/// Deterministic random stream.
///
/// Draws come from std::mt19937_64 (whose output sequence the standard pins
/// down exactly) but all real-valued conversions are done by hand because the
/// std distributions are implementation-defined. Results are therefore
/// bit-identical across compilers and standard libraries.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1), 53-bit resolution.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller. No pair caching: each call consumes two
  /// engine draws, which keeps the stream position a pure function of the
  /// call count.
  double normal() {
    const double u1 =
        static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi_ * u2);
  }

  /// Uniform integer in [lo, hi] via rejection-free scaling; the tiny modulo
  /// bias is irrelevant at our range sizes but determinism matters.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

 private:
  static constexpr double kPi_ = 3.14159265358979323846;
  std::mt19937_64 engine_;
};

}  // namespace diffcal
