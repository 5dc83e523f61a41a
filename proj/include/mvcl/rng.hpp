#pragma once

// Seeded RNG split into named purpose streams, so toggling one consumer
// (e.g. text masking) does not shift draws seen by the others.

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace mvcl {

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

class SplitRng {
  public:
    explicit SplitRng(std::uint64_t seed) : seed_(seed) {}

    // Deterministic stream for a purpose; the same (seed, purpose) pair
    // always yields the same sequence.
    std::mt19937_64 stream(std::string_view purpose) const {
        return std::mt19937_64(fnv1a(purpose, seed_ ^ 0x9e3779b97f4a7c15ull));
    }

    std::uint64_t seed() const { return seed_; }

  private:
    std::uint64_t seed_;
};

}  // namespace mvcl
