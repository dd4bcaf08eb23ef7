#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>

namespace dapd {

// Deterministic 64-bit generator (splitmix64). All randomness in the project
// flows through this type so runs are reproducible across platforms and
// thread counts; the standard <random> distributions are avoided because
// their output is implementation-defined.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1), 53 random bits.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform double in (0, 1].
    double next_open_unit() { return 1.0 - next_unit(); }

    // Uniform integer in [0, n), exact (rejection sampling).
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("next_below: n must be positive");
        const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller.
    double next_normal();

    // Index sampled from an (unnormalized is fine) non-negative weight vector.
    int sample_categorical(std::span<const double> probs);

    // Stable stream derivation: independent generator for (seed, stream, index).
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

  private:
    std::uint64_t state_;
};

}  // namespace dapd
