#pragma once

// Self-contained RNG stack. std::mt19937 + std::*_distribution would work, but
// the distributions are implementation-defined, and experiment manifests promise
// bit-identical replays. So: xoshiro256++ for the raw stream, splitmix64 for
// seeding, and explicit transforms for uniform/exponential/normal.

#include <array>
#include <cmath>
#include <cstdint>

namespace superproc {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0x853c49e6748fea9bULL) { reseed(seed); }

    void reseed(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : s_) word = splitmix64_next(sm);
        have_cached_normal_ = false;
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }

    result_type operator()() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform on [0,1): 53 random bits, exactly representable.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    // Uniform on (0,1], safe as a log() argument.
    double uniform_pos() {
        return (static_cast<double>((*this)() >> 11) + 1.0) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double exponential() { return -std::log(uniform_pos()); }

    // Marsaglia polar method; the pair cache is part of the generator state.
    double normal() {
        if (have_cached_normal_) {
            have_cached_normal_ = false;
            return cached_normal_;
        }
        double u, v, r2;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            r2 = u * u + v * v;
        } while (r2 >= 1.0 || r2 == 0.0);
        const double m = std::sqrt(-2.0 * std::log(r2) / r2);
        cached_normal_ = v * m;
        have_cached_normal_ = true;
        return u * m;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::array<std::uint64_t, 4> s_{};
    double cached_normal_ = 0.0;
    bool have_cached_normal_ = false;
};

// Counter-based derivation of per-replica streams: feed (master, id) through
// splitmix64 twice so that nearby replica ids land far apart in seed space.
inline Rng seed_stream(std::uint64_t master_seed, std::uint64_t replica_id) {
    std::uint64_t st = master_seed;
    std::uint64_t a = splitmix64_next(st);
    st ^= replica_id * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL;
    std::uint64_t b = splitmix64_next(st);
    return Rng(a ^ (b + (replica_id << 1)));
}

} // namespace superproc
