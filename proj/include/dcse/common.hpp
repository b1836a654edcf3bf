#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcse {

// Error taxonomy shared by all modules. Everything derives from Error so
// callers can catch coarsely; the concrete type names the contract that
// was violated.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct LengthError : Error {
    using Error::Error;
};
struct RangeError : Error {
    using Error::Error;
};
struct GeometryError : Error {
    using Error::Error;
};
struct DegenerateInputError : Error {
    using Error::Error;
};
struct EstimationError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct VersionError : Error {
    using Error::Error;
};

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

// splitmix64, used only to expand / mix seeds.
inline uint64_t splitmix64_next(uint64_t& state) {
    uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z          = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z          = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Deterministic per-item seed derivation: hash(global_seed, item_index).
// Parallel and serial corpus synthesis must agree, so this is the only
// sanctioned way to fan a global seed out to work items.
inline uint64_t derive_seed(uint64_t global_seed, uint64_t item_index) {
    uint64_t s = global_seed ^ (0x6C62272E07BB0142ull + item_index * 0x100000001B3ull);
    uint64_t a = splitmix64_next(s);
    uint64_t b = splitmix64_next(s);
    return a ^ (b << 1);
}

// FNV-1a over raw bytes; used for manifest checksums in the harness.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xCBF29CE484222325ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) {
    return fnv1a64(s.data(), s.size());
}

constexpr double kPi = 3.14159265358979323846;

}  // namespace dcse
