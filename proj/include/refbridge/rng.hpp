#pragma once

#include <cmath>
#include <cstdint>

namespace refbridge {

// One splitmix64 step. Also the sub-seed derivation primitive: every
// per-image / per-tile / per-sample stream is seeded with
// sub_seed(master, index) so results do not depend on scheduling order.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t sub_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t state = master ^ (0xD1B54A32D192ED03ULL * (index + 1));
    return splitmix64(state);
}

// Deterministic PRNG with platform-independent output. std::normal_distribution
// is implementation-defined, so uniform and normal draws are spelled out here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // burn-in so nearby seeds decorrelate
        splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller; second value of each pair is cached
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        // u1 in (0, 1] so log is finite
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

private:
    std::uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace refbridge
