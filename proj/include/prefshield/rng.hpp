#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace prefshield {

/// Seeded random stream with a fixed draw budget.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard, so traces are reproducible across compilers and platforms. The
/// standard distributions are not portable, so the two derived draws below
/// are implemented here and each consumes exactly one engine output.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform real in [0, 1) from the top 53 bits of one draw.
  double uniform_real() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Index in [0, n) by multiply-shift of one draw. n must be > 0. The bias is
  /// below n / 2^64, irrelevant for the tiny n used here.
  std::size_t uniform_index(std::size_t n) {
    const unsigned __int128 wide = static_cast<unsigned __int128>(engine_()) * n;
    return static_cast<std::size_t>(wide >> 64);
  }

  void reseed(std::uint64_t seed) {
    seed_ = seed;
    engine_.seed(seed);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace prefshield
