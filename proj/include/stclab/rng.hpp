// Counter-based random numbers. Every random quantity in the project is a
// pure function of (seed, stream label, counter), so runs are reproducible
// from the seed in the manifest alone and independent of call order.
#pragma once

#include <cstdint>
#include <string_view>

namespace stclab {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class CounterRng {
  public:
    CounterRng() = default;
    explicit CounterRng(std::uint64_t seed) : state_(seed) {}
    CounterRng(std::uint64_t seed, std::string_view stream)
        : state_(splitmix64(seed ^ fnv1a(stream))) {}

    CounterRng stream(std::string_view label) const {
        return CounterRng(state_, label);
    }

    std::uint64_t next_u64() { return splitmix64(state_ ^ counter_++); }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [-1, 1).
    double symmetric() { return 2.0 * uniform() - 1.0; }

    /// Uniform in [-bound, bound).
    double bounded(double bound) { return bound * symmetric(); }

  private:
    std::uint64_t state_ = 0;
    std::uint64_t counter_ = 0;
};

} // namespace stclab
