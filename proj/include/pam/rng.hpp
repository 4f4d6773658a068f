#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace pam {

// Deterministic random source. Distribution shaping is done by hand so that
// streams are stable across standard-library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed), seed_mix_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    // Uniform in [0, 1e0) excluding 0, for log transforms.
    double uniform_pos() {
        double u;
        do {
            u = uniform();
        } while (u <= 0.0);
        return u;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        // Rejection sampling for an unbiased draw.
        std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % span;
        std::uint64_t v;
        do {
            v = eng_();
        } while (v >= limit);
        return lo + static_cast<std::int64_t>(v % span);
    }

    // Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform_pos();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Standard Gumbel: -log(-log(U)).
    double gumbel() { return -std::log(-std::log(uniform_pos())); }

    // Splits off an independent stream; mixes the key so nearby keys diverge.
    Rng split(std::uint64_t key) const {
        std::uint64_t h = seed_mix_ ^ (key + 0x9e3779b97f4a7c15ULL);
        h ^= h >> 30;
        h *= 0xbf58476d1ce4e5b9ULL;
        h ^= h >> 27;
        h *= 0x94d049bb133111ebULL;
        h ^= h >> 31;
        return Rng(h);
    }

    static Rng from_keys(std::uint64_t a, std::uint64_t b) { return Rng(a).split(b); }

private:
    std::mt19937_64 eng_;
    std::uint64_t seed_mix_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace pam
