#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace hear {

// splitmix64 finalizer
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Counter-based RNG. Every draw is a pure function of (seed, stream label,
// instance, counter), so replay and checkpoint-resume need no mutable state
// beyond the construction arguments. std:: distributions are avoided on
// purpose: their output is implementation-defined.
class Rng {
public:
    Rng(uint64_t seed, std::string_view stream, uint64_t instance = 0)
        : key_(mix64(seed ^ mix64(fnv1a64(stream) + 0x632be59bd9b4e019ull * (instance + 1)))) {}

    uint64_t next_u64() { return mix64(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

    // [0, 1) with 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // (0, 1), safe under log()
    double uniform_open() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal() {
        const double u1 = uniform_open();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // rejection-sampled truncation at |z| <= clip standard deviations
    double trunc_normal(double stddev, double clip = 2.0) {
        for (;;) {
            const double z = normal();
            if (std::fabs(z) <= clip) return z * stddev;
        }
    }

    double gumbel() { return -std::log(-std::log(uniform_open())); }

    // unbiased integer in [0, n)
    uint64_t below(uint64_t n) {
        const uint64_t limit = ~0ull - ~0ull % n;
        for (;;) {
            const uint64_t v = next_u64();
            if (v < limit) return v % n;
        }
    }

    // k distinct indices from [0, n), returned sorted ascending
    std::vector<int> sample_without_replacement(int n, int k);

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t key_;
    uint64_t counter_ = 0;
};

} // namespace hear
