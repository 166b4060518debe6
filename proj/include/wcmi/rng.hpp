#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "wcmi/matrix.hpp"

namespace wcmi {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/**
 * Derives a per-stage seed from the master seed.
 *
 * Stage seeds are a 64-bit FNV-1a hash of (master, stage name, index),
 * finalized with a splitmix64 mix. Adding a new stage therefore never
 * reshuffles the seeds of existing stages.
 */
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stage,
                                 std::uint64_t index = 0) {
    std::uint64_t h = 14695981039346656037ULL;
    auto mix_u64 = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xffULL;
            h *= 1099511628211ULL;
        }
    };
    mix_u64(master);
    for (unsigned char c : stage) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    mix_u64(index);
    return splitmix64(h);
}

/**
 * Deterministic random stream: mt19937_64 with our own floating-point
 * derivations so identical (seed, algorithm) pairs yield identical
 * sequences everywhere. A stream is single-owner; never advance one
 * instance from two threads.
 */
class SeededRng {
public:
    static constexpr std::string_view kAlgorithm = "mt19937_64/polar";

    explicit SeededRng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

    std::uint64_t seed() const { return seed_; }
    std::string_view algorithm() const { return kAlgorithm; }

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform double in [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via the Marsaglia polar method (sqrt/log only).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    /// Unbiased uniform integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("SeededRng::below: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = eng_();
        } while (x >= limit);
        return x % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
    }

    /// k distinct indices drawn uniformly from [0, n), in draw order.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
        if (k > n) throw std::invalid_argument("SeededRng::sample_indices: k > n");
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        for (std::size_t i = 0; i < k; ++i)
            std::swap(pool[i], pool[i + static_cast<std::size_t>(below(n - i))]);
        pool.resize(k);
        return pool;
    }

    Vec normal_vec(std::size_t n) {
        Vec v(n);
        for (auto& x : v) x = normal();
        return v;
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace wcmi
