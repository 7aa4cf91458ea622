#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace s2r {

// Deterministic RNG. mt19937_64 has a fully specified sequence, and we do our
// own uniform/normal transforms because the std distributions are allowed to
// differ between standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        // modulo bias is irrelevant at our n (<< 2^64) but keep it exact anyway
        std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t v;
        do {
            v = eng_();
        } while (v >= limit);
        return v % n;
    }

    // Box-Muller, one value per call (the pair's second half is discarded so
    // there is no hidden cache to serialize).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // State round-trips through the standard text representation.
    std::string save_state() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }
    void load_state(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
    }

private:
    std::mt19937_64 eng_;
};

// Counter-based hash noise for procedural rendering: the value at (seed, k)
// never depends on evaluation order. SplitMix64 finalizer.
inline std::uint64_t hash_u64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline double hash_uniform(std::uint64_t seed, std::uint64_t k) {
    return static_cast<double>(hash_u64(seed ^ hash_u64(k)) >> 11) * 0x1.0p-53;
}

// Two hash draws -> one Gaussian.  Deterministic in (seed, k).
inline double hash_normal(std::uint64_t seed, std::uint64_t k) {
    double u1 = hash_uniform(seed, 2 * k);
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    double u2 = hash_uniform(seed, 2 * k + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace s2r
