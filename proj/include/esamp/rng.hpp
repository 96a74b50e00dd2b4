#pragma once

#include <cmath>
#include <cstdint>

namespace esamp {

// splitmix64 finalizer; good avalanche, used both as a generator step and to
// hash (seed, stream id, step) tuples into independent counter-based streams.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_stream(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t h = mix64(seed);
    h = mix64(h ^ (a + 0x9e3779b97f4a7c15ULL));
    h = mix64(h ^ (b + 0xc2b2ae3d27d4eb4fULL));
    h = mix64(h ^ (c + 0x165667b19e3779f9ULL));
    return h;
}

// Small deterministic generator. Not crypto; bit-reproducible across builds,
// which is what the determinism gate actually needs.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t x = state_;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    // [0, 1) with 53 random bits
    double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // standard normal via Box-Muller (deterministic, keeps the spare draw)
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// one-shot uniform for counter-based sampling streams: the value depends only
// on the tuple, never on call order, so sync and async schedules agree.
inline double stream_uniform(uint64_t seed, uint64_t a, uint64_t b, uint64_t c = 0) {
    return double(derive_stream(seed, a, b, c) >> 11) * 0x1.0p-53;
}

} // namespace esamp
