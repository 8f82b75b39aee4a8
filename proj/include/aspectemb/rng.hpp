#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace aspectemb {

// Seeded random source with a fixed cross-platform output sequence.
//
// The generator is mt19937-64 (its stream is pinned by the C++ standard) and
// all derived draws below are implemented by hand, because std::shuffle and
// the std distribution classes are implementation-defined. Every stochastic
// operation in this project goes through this class.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Unbiased integer in [0, n) via rejection sampling.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: n must be > 0");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Double in [0, 1) with 53 random mantissa bits.
  double uniform_real() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Double in [-bound, bound).
  double uniform_symmetric(double bound) {
    return bound * (2.0 * uniform_real() - 1.0);
  }

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace aspectemb
