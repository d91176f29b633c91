#pragma once

#include <cmath>
#include <cstdint>

namespace afl {

// Deterministic PRNG used everywhere in the simulator. xoshiro256++ seeded
// through splitmix64, with explicit bounded-int and normal draws; a given
// seed yields the same stream on every platform (std::*_distribution is
// implementation-defined).
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t s = seed;
        for (auto& word : state_) word = splitmix64(s);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Unbiased uniform integer in [0, n), n >= 1.
    uint64_t next_below(uint64_t n) {
        const uint64_t threshold = (0 - n) % n;  // 2^64 mod n
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller; the paired value is cached.
    double next_normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    static uint64_t splitmix64(uint64_t& x) {
        uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t state_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Stream domains, so that e.g. arrival sampling never perturbs worker noise.
enum class StreamTag : uint64_t {
    Arrivals = 1,
    Delay = 2,
    Worker = 3,
    StepChoice = 4,
    Data = 5,
    Probe = 6,
    Bootstrap = 7,
};

// Derive an independent substream from (seed, a, b, tag). The simulator uses
// a = round and b = worker id; identical tuples always yield identical streams.
inline Rng substream(uint64_t seed, uint64_t a, uint64_t b, StreamTag tag) {
    uint64_t h = seed;
    Rng::splitmix64(h);
    h ^= 0x9E3779B97F4A7C15ULL * (a + 1);
    Rng::splitmix64(h);
    h ^= 0xC2B2AE3D27D4EB4FULL * (b + 1);
    Rng::splitmix64(h);
    h ^= 0x165667B19E3779F9ULL * static_cast<uint64_t>(tag);
    return Rng(Rng::splitmix64(h));
}

}  // namespace afl
