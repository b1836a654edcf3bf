#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>

#include "dcse/common.hpp"

namespace dcse {

// xoshiro256++ with hand-rolled distributions. std::* distributions are
// implementation-defined, which would break the bitwise determinism
// contract, so every draw here is spelled out explicitly.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& s : state_) s = splitmix64_next(sm);
        have_spare_ = false;
        spare_      = 0.0;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t      = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller, caching the spare draw.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double u2 = uniform();
        const double r  = std::sqrt(-2.0 * std::log(u1));
        const double a  = 2.0 * kPi * u2;
        spare_          = r * std::sin(a);
        have_spare_     = true;
        return r * std::cos(a);
    }

    // Unit-variance complex Gaussian: E|z|^2 = 1, each component N(0, 1/2).
    std::complex<double> complex_normal() {
        const double c = 1.0 / std::sqrt(2.0);
        const double re = normal();
        const double im = normal();
        return {c * re, c * im};
    }

    bool bernoulli(double p) { return uniform() < p; }

    // State serialization for checkpoints (hex, fixed field order).
    std::string save_state() const {
        char buf[4 * 16 + 4];
        int  n = 0;
        for (int i = 0; i < 4; ++i)
            n += std::snprintf(buf + n, sizeof(buf) - n, "%016llx",
                               static_cast<unsigned long long>(state_[i]));
        return std::string(buf, static_cast<size_t>(n));
    }

    void load_state(const std::string& hex) {
        if (hex.size() != 64) throw VersionError("rng state: expected 64 hex chars");
        for (int i = 0; i < 4; ++i)
            state_[i] = std::stoull(hex.substr(static_cast<size_t>(i) * 16, 16), nullptr, 16);
        have_spare_ = false;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<uint64_t, 4> state_{};
    bool   have_spare_ = false;
    double spare_      = 0.0;
};

}  // namespace dcse
