#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace msrg {

// Self-contained deterministic RNG (xoshiro256++ seeded via splitmix64).
// We avoid <random> distributions because their output is
// implementation-defined; every draw here is bit-reproducible.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed) {
        uint64_t x = seed;
        for (auto& word : state_) word = splitmix64(x);
        has_cached_normal_ = false;
    }

    // Independent stream derived from the original seed; consuming draws
    // from the parent does not affect the child.
    Rng fork(uint64_t tag) const {
        uint64_t x = seed_ ^ (0x9e3779b97f4a7c15ULL + tag * 0xbf58476d1ce4e5b9ULL);
        return Rng(splitmix64(x));
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

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    int64_t uniform_int(int64_t n) {
        return static_cast<int64_t>(uniform() * static_cast<double>(n)) % n;
    }

    // Standard normal via Box-Muller.
    double normal() {
        if (has_cached_normal_) {
            has_cached_normal_ = false;
            return cached_normal_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * 3.14159265358979323846 * u2;
        cached_normal_ = radius * std::sin(angle);
        has_cached_normal_ = true;
        return radius * std::cos(angle);
    }

    std::vector<int64_t> permutation(int64_t n) {
        std::vector<int64_t> p(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
        for (int64_t i = n - 1; i > 0; --i) {
            const int64_t j = uniform_int(i + 1);
            std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
        }
        return p;
    }

    uint64_t seed() const { return seed_; }

private:
    static uint64_t splitmix64(uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t seed_;
    uint64_t state_[4];
    bool has_cached_normal_;
    double cached_normal_ = 0.0;
};

}  // namespace msrg
