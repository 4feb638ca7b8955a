#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace dear {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic RNG. mt19937_64 output is pinned by the standard and every
// distribution below is built from raw bits here, so streams are bit-identical
// across platforms and toolchains (std::uniform_real_distribution is not).
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    // Independent stream derived from (seed, tag, index). Used so that samples
    // generated or processed in parallel draw from disjoint deterministic
    // streams regardless of worker count.
    static Rng substream(uint64_t seed, uint64_t tag, uint64_t index = 0) {
        uint64_t s = splitmix64(seed ^ 0x9e3779b97f4a7c15ULL);
        s = splitmix64(s ^ splitmix64(tag));
        s = splitmix64(s + index);
        return Rng(s);
    }

    uint64_t bits() { return engine_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in [0, n). Rejection sampling keeps the distribution exact.
    uint64_t below(uint64_t n) {
        const uint64_t threshold = (0 - n) % n;  // 2^64 mod n
        uint64_t x;
        do {
            x = engine_();
        } while (x < threshold);
        return x % n;
    }

    int range_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1)));
    }

    // Standard normal via Box-Muller with a cached spare.
    double gauss() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    // Fisher-Yates. std::shuffle is implementation-defined, this is not.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace dear
