#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace adaptcl {

// splitmix64 finalizer. Used both as a standalone mixer and to derive
// child seeds from a master seed, so a single --seed reproduces every
// shuffle and init in a run.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives a child seed from (master, path...). Each path element hashes
// into the chain, so derive(s, {1, 2}) != derive(s, {2, 1}).
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = splitmix64(master);
    for (std::uint64_t p : path) {
        s = splitmix64(s ^ splitmix64(p));
    }
    return s;
}

// Deterministic RNG over the standardized mt19937_64 bit stream. The
// uniform/normal mappings are implemented here rather than through
// std::*_distribution, whose output is implementation-defined; this keeps
// seeded results identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; generates pairs, caches the spare.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Normal with given std, resampled until within +/- 2 std.
    double truncated_normal(double stddev) {
        double v = 0.0;
        do {
            v = normal();
        } while (std::abs(v) > 2.0);
        return v * stddev;
    }

    // Uniform integer in [0, n). Rejection-free modulo is fine at this scale;
    // determinism matters, negligible bias does not.
    std::size_t below(std::size_t n) {
        if (n == 0) return 0;
        return static_cast<std::size_t>(gen_() % n);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace adaptcl
