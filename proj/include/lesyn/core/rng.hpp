#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace lesyn {

// Deterministic RNG with a fixed algorithm (xoshiro256++ seeded via splitmix64).
// std::mt19937 distributions are implementation-defined, so everything that must
// be reproducible across toolchains goes through this class.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
        has_spare_ = false;
        spare_ = 0.0;
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

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be > 0.
    uint64_t uniform_int(uint64_t n) {
        // Lemire's multiply-shift with rejection; deterministic.
        uint64_t x = next_u64();
        __uint128_t m = static_cast<__uint128_t>(x) * static_cast<__uint128_t>(n);
        uint64_t lo = static_cast<uint64_t>(m);
        if (lo < n) {
            const uint64_t t = (0 - n) % n;
            while (lo < t) {
                x = next_u64();
                m = static_cast<__uint128_t>(x) * static_cast<__uint128_t>(n);
                lo = static_cast<uint64_t>(m);
            }
        }
        return static_cast<uint64_t>(m >> 64);
    }

    // Standard normal via Box-Muller.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename V>
    void shuffle(std::vector<V>& v) {
        if (v.size() < 2) return;
        for (size_t i = v.size() - 1; i > 0; --i) {
            const size_t j = static_cast<size_t>(uniform_int(i + 1));
            std::swap(v[i], v[j]);
        }
    }

    // Independent child stream; `salt` distinguishes siblings.
    Rng fork(uint64_t salt) {
        uint64_t s = next_u64() ^ (salt * 0x9e3779b97f4a7c15ULL + 0x1234567898765431ULL);
        return Rng(splitmix64(s));
    }

private:
    static uint64_t splitmix64(uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t state_[4];
    double spare_;
    bool has_spare_;
};

}  // namespace lesyn
