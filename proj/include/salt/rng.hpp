#pragma once

#include <cmath>
#include <cstdint>

#include "core.hpp"

namespace salt {

// splitmix64 finalizer; also the published per-record seed mixer.
inline uint64_t mix_fin(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Seed for (global seed, record id). Parallel and serial runs derive
// identical per-record streams from this.
inline uint64_t mix_seed(uint64_t global_seed, uint64_t record_id) {
    return mix_fin(global_seed ^ mix_fin(record_id + 0x51A1C5EEDull));
}

inline uint64_t mix_seed(uint64_t global_seed, uint64_t a, uint64_t b) {
    return mix_seed(mix_seed(global_seed, a), b);
}

// splitmix64 stream with Box-Muller normals.
struct Rng {
    uint64_t state = 0;
    double spare = 0;
    bool has_spare = false;

    explicit Rng(uint64_t seed = 0) : state(seed) {}

    uint64_t next_u64() {
        state += 0x9E3779B97F4A7C15ull;
        uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // uniform in [0,1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n)
    uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

    double normal() {
        if (has_spare) {
            has_spare = false;
            return spare;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare = r * std::sin(a);
        has_spare = true;
        return r * std::cos(a);
    }

    template <typename S>
    void fill_normal(Tensor<S>& t) {
        for (auto& x : t.v) x = S(normal());
    }
};

template <typename S>
Tensor<S> randn(std::vector<int> shape, Rng& rng) {
    Tensor<S> t(std::move(shape));
    rng.fill_normal(t);
    return t;
}

}  // namespace salt
