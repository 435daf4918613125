#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace mmist {

// xoshiro256** with a splitmix64 seeder. All sampling routines are written
// out explicitly so that a given seed produces the same stream on every
// platform, which the reproducibility contracts depend on.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& s : state_) s = splitmix64(x);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0,1) with 53 bits of precision.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) {
        // Rejection sampling keeps the distribution exact.
        const uint64_t threshold = (~n + 1) % n;
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; one value per call, the partner draw is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do { u1 = uniform(); } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = size_t(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derives an independent substream; used to partition work (e.g. one
    // stream per patient) without coupling the draws.
    Rng substream(uint64_t index) const {
        uint64_t x = state_[0] ^ (0x9e3779b97f4a7c15ULL * (index + 1));
        return Rng(splitmix64(x));
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    static uint64_t splitmix64(uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint64_t state_[4]{};
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace mmist
