#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace pipetteloc {

// Deterministic RNG wrapper. mt19937_64 output is bit-stable across
// platforms; the standard distributions are not, so the transforms
// live here.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    // Mixes several seed components into one stream (splitmix64 steps).
    static uint64_t mix(uint64_t a, uint64_t b, uint64_t c = 0) {
        uint64_t x = a;
        x = splitmix(x + 0x9e3779b97f4a7c15ULL + b);
        x = splitmix(x + 0x9e3779b97f4a7c15ULL + c);
        return x;
    }

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() { return (engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(uniform() * (hi - lo + 1));
    }

    // Standard normal via Box-Muller (one value per call, cached pair).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stdev) { return mean + stdev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

private:
    static uint64_t splitmix(uint64_t x) {
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return x;
    }

    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace pipetteloc
