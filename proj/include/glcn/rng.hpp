#pragma once

// Self-contained PRNG (xoshiro256++ seeded through splitmix64).
//
// The standard library distributions are not bit-stable across
// implementations, and every experiment here must reproduce byte-identical
// artifacts from a seed. All stochastic code therefore goes through Rng,
// and independent streams are derived by hashing a (seed, path...) tuple,
// so parallel sampling order never changes results.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "glcn/common.hpp"

namespace glcn {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64_next(sm);
    }

    std::uint64_t next_u64() {
        auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
        std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1), 53 random bits.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi], inclusive. Unbiased via rejection.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        GLCN_CHECK(lo <= hi, "bad range [", lo, ", ", hi, "]");
        std::uint64_t range = std::uint64_t(hi - lo) + 1;
        if (range == 0) return std::int64_t(next_u64()); // full 64-bit range
        std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % range + 1) % range;
        std::uint64_t r;
        do {
            r = next_u64();
        } while (r > limit);
        return lo + std::int64_t(r % range);
    }

    // Standard normal via Box-Muller; second value cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double radius = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = radius * std::sin(theta);
        have_spare_ = true;
        return radius * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Index into a discrete distribution given by non-negative weights.
    std::size_t categorical(const std::vector<double>& weights) {
        double total = 0;
        for (double w : weights) total += w;
        GLCN_CHECK(total > 0, "categorical weights sum to zero");
        double r = uniform() * total;
        double acc = 0;
        for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
            acc += weights[i];
            if (r < acc) return i;
        }
        return weights.size() - 1;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = std::size_t(uniform_int(0, std::int64_t(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_[4] = {};
    double spare_ = 0;
    bool have_spare_ = false;
};

// Derive a child seed from a root seed and a path of identifiers.
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = root ^ 0x6c62272e07bb0142ull;
    for (std::uint64_t id : path) {
        s ^= id + 0x9e3779b97f4a7c15ull + (s << 6) + (s >> 2);
        std::uint64_t sm = s;
        s = splitmix64_next(sm);
    }
    return s;
}

inline Rng derive_rng(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
    return Rng(derive_seed(root, path));
}

inline std::uint64_t tag(const std::string& s) { return fnv1a64(s); }

} // namespace glcn
