#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace fwn {

// Splittable deterministic RNG. Every consumer derives its own stream by name
// from one root seed, so adding a new consumer never shifts the draws seen by
// existing ones.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // Decorrelate trivially related seeds (0, 1, 2, ...).
        next_u64();
    }

    // Child stream keyed by name; independent of draws taken from the parent.
    Rng split(std::string_view name) const {
        std::uint64_t h = 1469598103934665603ULL;  // FNV-1a 64
        for (char c : name) {
            h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
            h *= 1099511628211ULL;
        }
        return Rng(state_ ^ (h | 1ULL));
    }

    std::uint64_t next_u64() {
        // SplitMix64
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive bounds.
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    // Standard normal via Box-Muller (uncached, so copies stay in sync).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

  private:
    std::uint64_t state_;
};

}  // namespace fwn
