#pragma once
#include <cstdint>
#include <cmath>
#include <random>

namespace skpp {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seedable, splittable generator. Uniform/normal values are derived by hand
// from the raw 64-bit stream so outputs are identical across stdlib
// implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

    // Independent stream derived from this generator's seed and a stream tag.
    Rng split(uint64_t stream) const { return Rng(splitmix64(seed_ ^ splitmix64(stream + 1))); }

    uint64_t seed() const { return seed_; }
    uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive range
    int uniform_int(int lo, int hi) {
        return lo + int(next_u64() % uint64_t(hi - lo + 1));
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1 = 0.0, u2 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return mean + stddev * r * std::cos(theta);
    }

private:
    uint64_t seed_;
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace skpp
