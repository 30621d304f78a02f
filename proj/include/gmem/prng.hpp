#pragma once

// Deterministic randomness: xoshiro256** seeded through splitmix64.
// Substreams come from one splitmix64 step of (seed ^ stream_id), so parallel
// workers can draw independent streams that are reproducible from the run seed.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace gmem {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

class Prng {
public:
    explicit Prng(std::uint64_t seed) : seed_(seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) {
            word = splitmix64_next(sm);
        }
    }

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) {
            throw std::invalid_argument("Prng::uniform_int: n must be positive");
        }
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) {
                return r % n;
            }
        }
    }

    // Box-Muller with cached spare.
    double normal(double mean = 0.0, double stddev = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + spare_ * stddev;
        }
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 6.283185307179586476925286766559 * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return mean + radius * std::cos(angle) * stddev;
    }

    template <class T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            const std::uint64_t j = uniform_int(i);
            std::swap(values[i - 1], values[static_cast<std::size_t>(j)]);
        }
    }

    // Independent stream: splitmix64(seed ^ stream_id).
    Prng substream(std::uint64_t stream_id) const {
        std::uint64_t sm = seed_ ^ stream_id;
        return Prng(splitmix64_next(sm));
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<std::uint64_t, 4> state_{};
    std::uint64_t seed_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace gmem
