#pragma once

#include <cstdint>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

namespace pf {

// Deterministic RNG used everywhere. All draws go through explicit bit
// manipulation of mt19937_64 output so sequences do not depend on library
// distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double next_double() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    // uniform in [0, n)
    std::uint64_t next_below(std::uint64_t n) {
        // rejection sampling over the smallest covering power of two
        if (n <= 1) return 0;
        std::uint64_t mask = n - 1;
        mask |= mask >> 1;
        mask |= mask >> 2;
        mask |= mask >> 4;
        mask |= mask >> 8;
        mask |= mask >> 16;
        mask |= mask >> 32;
        std::uint64_t r = gen_() & mask;
        while (r >= n) r = gen_() & mask;
        return r;
    }

    // standard normal, Box-Muller with cached spare
    double next_gauss() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double two_pi = 6.283185307179586;
        const double u1 = 1.0 - next_double(); // (0, 1]
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(two_pi * u2);
        has_spare_ = true;
        return r * std::cos(two_pi * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Inverse-CDF draw from unnormalized non-negative weights. Caller
    // guarantees a positive total.
    std::size_t categorical(const double* w, std::size_t n) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += w[i];
        const double r = next_double() * total;
        double cum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            cum += w[i];
            if (r < cum) return i;
        }
        return n - 1;
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// splitmix64 finalizer; used to derive independent per-item seeds so results
// never depend on worker scheduling.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
    return mix_seed(base ^ mix_seed(stream ^ mix_seed(index)));
}

} // namespace pf
