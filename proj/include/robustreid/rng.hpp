#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace robustreid {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// mt19937_64 with hand-mapped distributions so that streams are identical
// across standard library implementations (std::uniform_* mappings are
// implementation-defined).
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : engine_(splitmix64(seed)) {}

    uint64_t u64() { return engine_(); }

    // Independent child stream; tag selects the branch.
    Rng split(uint64_t tag) { return Rng(splitmix64(u64() ^ splitmix64(tag))); }
    // Child stream that does not advance this one (for per-index fanout).
    Rng child_at(uint64_t base, uint64_t index) const {
        return Rng(splitmix64(base ^ splitmix64(index + 0x51ed2701)));
    }

    double uniform01() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    // Box-Muller without cached spare (keeps the state equal to the engine state).
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform01();
        double u2 = uniform01();
        if (u1 < 1e-300) u1 = 1e-300;
        double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
        return mean + stddev * z;
    }

    // Uniform integer in [0, n)
    uint64_t index(uint64_t n) {
        if (n <= 1) return 0;
        return static_cast<uint64_t>((static_cast<__uint128_t>(u64()) * n) >> 64);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {  // Fisher-Yates, deterministic across platforms
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    template <class T>
    const T& pick(const std::vector<T>& v) {
        return v[static_cast<size_t>(index(v.size()))];
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace robustreid
