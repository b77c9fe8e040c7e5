#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace sinklab {

// splitmix64 generator with counter-based child derivation. Output is
// bit-stable across platforms, unlike the std:: distributions.
class Rng {
    std::uint64_t state_;

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Independent child stream for (seed, counter); insensitive to how much
    // of the parent stream has been consumed.
    Rng derive(std::uint64_t counter) const { return Rng(mix(state_ ^ mix(counter + 0x51ed2701a9e3ULL))); }

    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    float uniform_float(float lo, float hi) { return lo + static_cast<float>(uniform()) * (hi - lo); }

    // [lo, hi] inclusive
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    float normal(float mean = 0.f, float stddev = 1.f) {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * static_cast<float>(r * std::cos(2.0 * M_PI * u2));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(next_u64() % i);
            std::swap(v[i - 1], v[j]);
        }
    }
};

}  // namespace sinklab
