#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dcse/common.hpp"
#include "dcse/fft.hpp"
#include "dcse/rng.hpp"
#include "dcse/wave.hpp"

namespace dcse {

// Procedural noise taxonomy: 10 generated classes plus index 10 = "none".
// Class indices are part of the label contract and must never be reordered.
//   0 white        1 pink         2 brown
//   3 band 500 Hz  4 band 1 kHz   5 band 2 kHz   6 band 4 kHz
//   7 AM white     8 harmonic hum 9 impulsive crackle
constexpr int kNumNoiseClasses = 11;
constexpr int kNoNoiseClass    = 10;

inline const char* noise_class_name(int c) {
    switch (c) {
        case 0: return "white";
        case 1: return "pink";
        case 2: return "brown";
        case 3: return "band500";
        case 4: return "band1k";
        case 5: return "band2k";
        case 6: return "band4k";
        case 7: return "am_white";
        case 8: return "hum";
        case 9: return "crackle";
        case 10: return "none";
        default: throw RangeError("noise class out of range");
    }
}

namespace detail {

// Gaussian white spectrum shaped by per-bin weights, back to time domain.
inline std::vector<double> spectral_noise(size_t n, Rng& rng,
                                          const std::vector<double>& bin_weight) {
    std::vector<std::complex<double>> spec(n / 2 + 1, {0.0, 0.0});
    for (size_t k = 1; k < spec.size(); ++k)
        spec[k] = std::complex<double>(rng.normal(), rng.normal()) * bin_weight[k];
    return fft::irfft(spec, static_cast<int>(n));
}

inline void normalize_rms(std::vector<double>& x) {
    double acc = 0.0;
    for (double v : x) acc += v * v;
    const double r = std::sqrt(acc / static_cast<double>(x.size()));
    if (r <= 0.0) throw NumericError("noise generator produced silence");
    for (double& v : x) v /= r;
}

}  // namespace detail

// Unit-RMS noise of a given class; fully determined by (class, n, rate, seed).
inline Waveform make_noise(int noise_class, size_t n, int sample_rate, uint64_t seed) {
    if (noise_class < 0 || noise_class >= kNoNoiseClass)
        throw RangeError("make_noise: class must be in [0, 9]");
    if (n == 0) throw LengthError("make_noise: empty request");

    Rng                 rng(seed);
    std::vector<double> x;
    const double        fs    = static_cast<double>(sample_rate);
    const size_t        nbins = n / 2 + 1;

    switch (noise_class) {
        case 0: {  // white
            x.resize(n);
            for (auto& v : x) v = rng.normal();
            break;
        }
        case 1:    // pink, -3 dB/oct
        case 2: {  // brown, -6 dB/oct
            std::vector<double> w(nbins, 0.0);
            for (size_t k = 1; k < nbins; ++k)
                w[k] = noise_class == 1 ? 1.0 / std::sqrt(static_cast<double>(k))
                                        : 1.0 / static_cast<double>(k);
            x = detail::spectral_noise(n, rng, w);
            break;
        }
        case 3:
        case 4:
        case 5:
        case 6: {  // band-limited around fc with Gaussian skirt
            const double fc = 500.0 * std::pow(2.0, noise_class - 3);
            const double bw = fc / 4.0;
            std::vector<double> w(nbins, 0.0);
            for (size_t k = 1; k < nbins; ++k) {
                const double f = static_cast<double>(k) * fs / static_cast<double>(n);
                const double z = (f - fc) / bw;
                w[k]           = std::exp(-0.5 * z * z);
            }
            x = detail::spectral_noise(n, rng, w);
            break;
        }
        case 7: {  // amplitude-modulated white
            const double fm  = rng.uniform(2.0, 8.0);
            const double ph  = rng.uniform(0.0, 2.0 * kPi);
            x.resize(n);
            for (size_t i = 0; i < n; ++i) {
                const double t = static_cast<double>(i) / fs;
                x[i] = rng.normal() * (1.0 + 0.9 * std::sin(2.0 * kPi * fm * t + ph));
            }
            break;
        }
        case 8: {  // mains-style harmonic hum + low noise floor
            x.assign(n, 0.0);
            for (int h = 1; h <= 10; ++h) {
                const double ph = rng.uniform(0.0, 2.0 * kPi);
                const double a  = 1.0 / static_cast<double>(h);
                for (size_t i = 0; i < n; ++i) {
                    const double t = static_cast<double>(i) / fs;
                    x[i] += a * std::sin(2.0 * kPi * 50.0 * h * t + ph);
                }
            }
            for (size_t i = 0; i < n; ++i) x[i] += 0.01 * rng.normal();
            break;
        }
        case 9: {  // sparse impulses with exponential decay
            x.assign(n, 0.0);
            const double rate  = 120.0;  // events per second
            const double tau_s = 0.0015;
            const int    klen  = static_cast<int>(5.0 * tau_s * fs);
            double       t     = 0.0;
            while (true) {
                double u = rng.uniform();
                if (u <= 0.0) u = 0x1.0p-53;
                t += -std::log(u) / rate;
                const size_t start = static_cast<size_t>(t * fs);
                if (start >= n) break;
                const double amp = rng.uniform(0.3, 1.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
                for (int j = 0; j < klen && start + static_cast<size_t>(j) < n; ++j)
                    x[start + static_cast<size_t>(j)] +=
                        amp * std::exp(-static_cast<double>(j) / (tau_s * fs));
            }
            for (size_t i = 0; i < n; ++i) x[i] += 0.003 * rng.normal();
            break;
        }
        default:
            throw RangeError("make_noise: unreachable");
    }

    detail::normalize_rms(x);
    return Waveform{std::move(x), sample_rate};
}

}  // namespace dcse
