#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "dcse/common.hpp"
#include "dcse/rng.hpp"
#include "dcse/wave.hpp"

namespace dcse {

constexpr double kSpeedOfSound = 343.0;  // m/s

struct RoomSpec {
    std::array<double, 3> dimensions{6.0, 4.0, 3.0};   // meters
    std::array<double, 3> source_position{2.0, 2.0, 1.5};
    std::array<double, 3> mic_position{4.0, 2.5, 1.5};
    double                absorption = 0.3;             // amplitude loss per bounce
    int                   max_reflection_order = 20;

    void validate() const {
        for (int d = 0; d < 3; ++d) {
            if (!(dimensions[d] > 0.0)) throw GeometryError("room dimension must be positive");
            if (!(source_position[d] > 0.0 && source_position[d] < dimensions[d]))
                throw GeometryError("source must lie strictly inside the room");
            if (!(mic_position[d] > 0.0 && mic_position[d] < dimensions[d]))
                throw GeometryError("mic must lie strictly inside the room");
        }
        if (source_position == mic_position)
            throw GeometryError("source and mic must not coincide");
        if (!(absorption > 0.0 && absorption <= 1.0))
            throw RangeError("absorption must be in (0, 1]");
        if (max_reflection_order < 0) throw RangeError("max_reflection_order must be >= 0");
    }
};

struct Rir {
    Waveform taps;
    double   t60_estimate_s = 0.0;  // 0 when the decay range could not be measured
};

// Reverberation time from backward-integrated impulse-response energy
// (Schroeder curve), line fit over the -5 .. -25 dB span, T60 = 3 * T20.
inline double estimate_t60(const Waveform& rir) {
    const auto& h = rir.samples;
    if (h.size() < 100) throw EstimationError("impulse response too short");

    std::vector<double> energy(h.size());
    double              acc = 0.0;
    for (size_t i = h.size(); i-- > 0;) {
        acc += h[i] * h[i];
        energy[i] = acc;
    }
    if (!(acc > 0.0)) throw EstimationError("impulse response has no energy");

    const double fs = static_cast<double>(rir.sample_rate);
    ptrdiff_t    n5 = -1, n25 = -1;
    for (size_t i = 0; i < energy.size(); ++i) {
        const double db = 10.0 * std::log10(energy[i] / acc);
        if (n5 < 0 && db <= -5.0) n5 = static_cast<ptrdiff_t>(i);
        if (db <= -25.0) { n25 = static_cast<ptrdiff_t>(i); break; }
    }
    if (n5 < 0 || n25 < 0 || n25 - n5 < 8)
        throw EstimationError("decay range does not reach -25 dB");

    // least squares on (time, level) over the fit span
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double m = static_cast<double>(n25 - n5 + 1);
    for (ptrdiff_t i = n5; i <= n25; ++i) {
        const double t  = static_cast<double>(i) / fs;
        const double db = 10.0 * std::log10(energy[static_cast<size_t>(i)] / acc);
        sx += t; sy += db; sxx += t * t; sxy += t * db;
    }
    const double denom = m * sxx - sx * sx;
    if (!(denom > 0.0)) throw EstimationError("degenerate decay fit");
    const double slope = (m * sxy - sx * sy) / denom;  // dB per second
    if (!(slope < 0.0)) throw EstimationError("decay is not monotone");
    return -60.0 / slope;
}

namespace detail {

// Add a windowed-sinc pulse of amplitude `amp` centered at fractional sample
// `center` (interpolation half-width 40, so support is 81 taps).
inline void add_fractional_pulse(std::vector<double>& taps, double center, double amp) {
    constexpr int half = 40;
    const ptrdiff_t lo = static_cast<ptrdiff_t>(std::ceil(center - half));
    const ptrdiff_t hi = static_cast<ptrdiff_t>(std::floor(center + half));
    if (lo < 0 || hi >= static_cast<ptrdiff_t>(taps.size()))
        throw LengthError("rir buffer too short for pulse");

    const double frac = static_cast<double>(lo) - center;  // in (-41, 0]
    // sin(pi*(frac + j)) alternates sign with constant magnitude, and the
    // Hann window cos term advances by a fixed angle, so both recurse cheaply.
    double       s      = std::sin(kPi * frac);
    const double wstep  = kPi / (half + 1);
    double       wc     = std::cos(wstep * frac);
    double       ws     = std::sin(wstep * frac);
    const double cstep  = std::cos(wstep);
    const double sstep  = std::sin(wstep);
    for (ptrdiff_t i = lo; i <= hi; ++i) {
        const double u    = static_cast<double>(i) - center;
        const double sinc = std::abs(u) < 1e-9 ? 1.0 : s / (kPi * u);
        const double win  = 0.5 * (1.0 + wc);
        taps[static_cast<size_t>(i)] += amp * sinc * win;
        s = -s;
        const double wc2 = wc * cstep - ws * sstep;
        ws = ws * cstep + wc * sstep;
        wc = wc2;
    }
}

}  // namespace detail

// Image-source room impulse response for a shoebox room with uniform wall
// absorption.  Per-axis image positions are (1-2p)*src + 2m*L with reflection
// count |m - p| + |m|; amplitude is (1-a)^order / (4*pi*distance).  Every
// image contributes an 81-tap windowed-sinc pulse delayed by 40 samples to
// keep the interpolation causal, and the response is scaled so the strongest
// tap of the direct pulse has unit magnitude.
inline Rir simulate_rir(const RoomSpec& room, int sample_rate) {
    room.validate();
    const double fs = static_cast<double>(sample_rate);
    const int    N  = room.max_reflection_order;

    struct Image { double dist; int order; };
    std::vector<Image> images;
    const int mmax = N / 2 + 1;
    for (int px = 0; px <= 1; ++px)
    for (int py = 0; py <= 1; ++py)
    for (int pz = 0; pz <= 1; ++pz)
    for (int mx = -mmax; mx <= mmax; ++mx) {
        const int ox = std::abs(mx - px) + std::abs(mx);
        if (ox > N) continue;
        const double ix = (1 - 2 * px) * room.source_position[0] + 2.0 * mx * room.dimensions[0];
        const double dx = ix - room.mic_position[0];
        for (int my = -mmax; my <= mmax; ++my) {
            const int oy = std::abs(my - py) + std::abs(my);
            if (ox + oy > N) continue;
            const double iy = (1 - 2 * py) * room.source_position[1] + 2.0 * my * room.dimensions[1];
            const double dy = iy - room.mic_position[1];
            for (int mz = -mmax; mz <= mmax; ++mz) {
                const int order = ox + oy + std::abs(mz - pz) + std::abs(mz);
                if (order > N) continue;
                const double iz = (1 - 2 * pz) * room.source_position[2] + 2.0 * mz * room.dimensions[2];
                const double dz = iz - room.mic_position[2];
                images.push_back({std::sqrt(dx * dx + dy * dy + dz * dz), order});
            }
        }
    }

    double direct_dist = 0.0, max_dist = 0.0;
    for (const auto& im : images) {
        if (im.order == 0) direct_dist = im.dist;
        max_dist = std::max(max_dist, im.dist);
    }
    if (!(direct_dist > 0.0)) throw GeometryError("no direct path found");

    constexpr int half = 40;
    const size_t len = static_cast<size_t>(std::ceil(max_dist / kSpeedOfSound * fs)) + 2 * half + 2;
    std::vector<double> taps(len, 0.0);
    for (const auto& im : images) {
        const double amp = std::pow(1.0 - room.absorption, im.order) / (4.0 * kPi * im.dist);
        if (amp == 0.0) continue;
        detail::add_fractional_pulse(taps, im.dist / kSpeedOfSound * fs + half, amp);
    }

    // unit-magnitude direct tap
    const double direct_center = direct_dist / kSpeedOfSound * fs + half;
    const size_t w0   = static_cast<size_t>(std::max<ptrdiff_t>(0, static_cast<ptrdiff_t>(std::ceil(direct_center - half))));
    const size_t w1   = std::min(taps.size(), static_cast<size_t>(direct_center + half) + 1);
    double       peak = 0.0;
    for (size_t i = w0; i < w1; ++i) peak = std::max(peak, std::abs(taps[i]));
    if (!(peak > 0.0)) throw NumericError("degenerate impulse response");
    for (auto& v : taps) v /= peak;

    Rir rir{Waveform{std::move(taps), sample_rate}, 0.0};
    try {
        rir.t60_estimate_s = estimate_t60(rir.taps);
    } catch (const EstimationError&) {
        rir.t60_estimate_s = 0.0;
    }
    return rir;
}

// Sample a room whose simulated response lands near a target reverberation
// time and return it together with the simulated response.  The initial wall
// absorption inverts the Eyring relation T60 = 0.161 V / (-S ln(1 - a_energy))
// (converted to the per-bounce amplitude loss used by simulate_rir); because
// the image lattice decays direction-dependently, the realized T60 can exceed
// that prediction by tens of percent at high absorption, so the absorption is
// then calibrated closed-loop against estimate_t60.
struct CalibratedRoom {
    RoomSpec room;
    Rir      rir;
};

inline CalibratedRoom calibrated_room_for_t60(double target_t60_s, uint64_t seed,
                                              int sample_rate = 16000) {
    if (!(target_t60_s >= 0.1 && target_t60_s <= 2.0))
        throw RangeError("target T60 must be in [0.1, 2.0] s");
    Rng rng(seed);

    RoomSpec room;
    room.dimensions = {rng.uniform(3.0, 10.0), rng.uniform(3.0, 10.0), rng.uniform(2.5, 4.0)};
    const double V = room.dimensions[0] * room.dimensions[1] * room.dimensions[2];
    const double S = 2.0 * (room.dimensions[0] * room.dimensions[1] +
                            room.dimensions[0] * room.dimensions[2] +
                            room.dimensions[1] * room.dimensions[2]);

    auto set_energy_absorption = [&](double alpha_energy) {
        alpha_energy    = std::clamp(alpha_energy, 0.01, 0.99);
        room.absorption = 1.0 - std::sqrt(1.0 - alpha_energy);
    };
    set_energy_absorption(1.0 - std::exp(-0.161 * V / (S * target_t60_s)));

    auto sample_point = [&](Rng& r) {
        std::array<double, 3> p;
        for (int d = 0; d < 3; ++d) p[d] = r.uniform(0.5, room.dimensions[d] - 0.5);
        return p;
    };
    room.source_position = sample_point(rng);
    for (int attempt = 0; attempt < 64; ++attempt) {
        room.mic_position = sample_point(rng);
        double d2 = 0.0;
        for (int d = 0; d < 3; ++d) {
            const double diff = room.mic_position[d] - room.source_position[d];
            d2 += diff * diff;
        }
        if (d2 >= 0.25) break;
    }

    // enough bounces that the simulated decay genuinely reaches -25 dB before
    // truncation: time to fall 35 dB, converted to bounces via the mean free path
    const double mean_free_path = 4.0 * V / S;
    const double decay_time     = target_t60_s * 35.0 / 60.0;
    room.max_reflection_order =
        static_cast<int>(std::ceil(decay_time * kSpeedOfSound / mean_free_path)) + 3;
    room.validate();

    // proportional updates on the per-bounce energy log-loss: decay rate is
    // roughly linear in ln(1 - alpha_energy), so scale it by measured/target
    CalibratedRoom best{room, simulate_rir(room, sample_rate)};
    for (int iter = 0; iter < 5; ++iter) {
        const double measured = best.rir.t60_estimate_s;
        if (!(measured > 0.0)) throw EstimationError("calibration rir has no decay span");
        if (std::abs(measured / target_t60_s - 1.0) <= 0.08) return best;
        const double keep = 1.0 - room.absorption;  // amplitude kept per bounce
        set_energy_absorption(1.0 - std::exp(2.0 * std::log(keep) * measured / target_t60_s));
        best = {room, simulate_rir(room, sample_rate)};
    }
    return best;
}

inline RoomSpec room_for_t60(double target_t60_s, uint64_t seed) {
    return calibrated_room_for_t60(target_t60_s, seed).room;
}

// Convolve with an impulse response, truncate to the input length, and match
// the input's peak level so downstream SNR mixing sees comparable scales.
inline Waveform apply_reverb(const Waveform& x, const Rir& rir) {
    x.validate();
    rir.taps.validate();
    if (x.sample_rate != rir.taps.sample_rate)
        throw ConfigError("sample rate mismatch between signal and rir");

    const size_t n = x.size(), k = rir.taps.size();
    std::vector<double> out(n, 0.0);
    if (k * n > size_t{1} << 22) {
        // overlap-free FFT convolution, truncated to n
        size_t m = 1;
        while (m < n + k - 1) m <<= 1;
        std::vector<double> a(m, 0.0), b(m, 0.0);
        std::copy(x.samples.begin(), x.samples.end(), a.begin());
        std::copy(rir.taps.samples.begin(), rir.taps.samples.end(), b.begin());
        auto A = fft::rfft(a);
        auto B = fft::rfft(b);
        for (size_t i = 0; i < A.size(); ++i) A[i] *= B[i];
        auto full = fft::irfft(A, static_cast<int>(m));
        std::copy(full.begin(), full.begin() + static_cast<ptrdiff_t>(n), out.begin());
    } else {
        for (size_t i = 0; i < n; ++i) {
            const size_t kj = std::min(k, i + 1);
            double acc = 0.0;
            for (size_t j = 0; j < kj; ++j) acc += x.samples[i - j] * rir.taps.samples[j];
            out[i] = acc;
        }
    }

    const double in_peak  = x.peak();
    double       out_peak = 0.0;
    for (double v : out) out_peak = std::max(out_peak, std::abs(v));
    if (out_peak > 0.0 && in_peak > 0.0) {
        const double g = in_peak / out_peak;
        for (auto& v : out) v *= g;
    }
    return Waveform{std::move(out), x.sample_rate};
}

}  // namespace dcse
