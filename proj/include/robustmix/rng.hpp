// rng.hpp -- seeded random number generation with a fully pinned-down output
// sequence.
//
// std::mt19937_64 is specified bit-for-bit by the standard, but the
// *distributions* (std::normal_distribution etc.) are not, so we roll our own
// transforms on top of the raw engine output:
//
//   uniform():  take the top 53 bits of one engine draw -> double in [0,1).
//   normal():   Box-Muller on two uniforms; the cosine branch is returned
//               first and the sine branch cached for the next call.
//
// Every consumer documents how many draws it makes per unit of work, which is
// what makes the affine-equivariance and byte-identity contracts testable.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "robustmix/common.hpp"

namespace robustmix {

// splitmix64: cheap, well-mixed stream derivation.  Used to derive
// independent child seeds from (seed, stream index) pairs so that modules
// can hand out sub-generators without coordinating draw counts.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream * 0x9e3779b97f4a7c15ULL + 1));
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed), seed_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform double in [0, 1), 53 random bits.
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) throw PreconditionFailed("uniform_index: n == 0");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t draw;
        do {
            draw = eng_();
        } while (draw >= limit);
        return draw % n;
    }

    // Standard normal via Box-Muller.  Consumes two uniforms every other
    // call; u1 is nudged away from 0 so log stays finite.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * kPi * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Independent child generator; `stream` values must be distinct per call
    // site.  Children never share state with the parent.
    Rng spawn(std::uint64_t stream) const {
        return Rng(derive_seed(seed_, stream));
    }

    // Fisher-Yates shuffle of [first, last).
    template <typename It>
    void shuffle(It first, It last) {
        const std::uint64_t n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const std::uint64_t j = uniform_index(i);
            std::swap(first[i - 1], first[j]);
        }
    }

  private:
    std::mt19937_64 eng_;
    std::uint64_t seed_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace robustmix
