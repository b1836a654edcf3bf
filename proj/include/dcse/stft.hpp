#pragma once

#include <algorithm>
#include <complex>
#include <vector>

#include "dcse/common.hpp"
#include "dcse/fft.hpp"
#include "dcse/wave.hpp"

namespace dcse {

enum class Window { Hann, Rect };

// Analysis/synthesis parameters. The whole pipeline operates on the
// compressed complex STFT; compression maps v -> scale * |v|^e * exp(i*arg v)
// and is exactly invertible for e in (0, 1].
struct StftConfig {
    int    frame_length = 510;  // 256 one-sided bins
    int    hop_length   = 128;
    Window window       = Window::Hann;
    double compression_exponent = 0.5;
    double compression_scale    = 0.15;
    // center=true reflect-pads frame_length/2 on both ends so the
    // round-trip is exact everywhere; center=false analyzes as-is.
    bool center = true;

    int bins() const { return frame_length / 2 + 1; }

    void validate() const {
        if (frame_length <= 1) throw ConfigError("stft: frame_length must be > 1");
        if (hop_length <= 0 || hop_length > frame_length)
            throw ConfigError("stft: require 0 < hop_length <= frame_length");
        if (compression_exponent <= 0.0 || compression_exponent > 1.0)
            throw ConfigError("stft: compression_exponent must be in (0, 1]");
        if (compression_scale <= 0.0) throw ConfigError("stft: compression_scale must be > 0");
    }
};

inline std::vector<double> make_window(Window w, int n) {
    std::vector<double> win(static_cast<size_t>(n), 1.0);
    if (w == Window::Hann) {
        // periodic Hann
        for (int i = 0; i < n; ++i)
            win[static_cast<size_t>(i)] =
                0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(n));
    }
    return win;
}

// Overlap-add reconstruction requires the squared-window overlap sum to be
// bounded away from zero at every steady-state position (NOLA).
inline void check_overlap_add(const StftConfig& cfg) {
    const auto win = make_window(cfg.window, cfg.frame_length);
    double     mn = 1e300, mx = 0.0;
    for (int n = 0; n < cfg.hop_length; ++n) {
        double s = 0.0;
        for (int j = n; j < cfg.frame_length; j += cfg.hop_length)
            s += win[static_cast<size_t>(j)] * win[static_cast<size_t>(j)];
        mn = std::min(mn, s);
        mx = std::max(mx, s);
    }
    if (mn <= 1e-8 * std::max(1.0, mx))
        throw ConfigError("stft: window/hop pair violates the overlap-add condition");
}

struct ComplexSpectrogram {
    int                               frames = 0;
    int                               bins   = 0;
    std::vector<std::complex<double>> data;  // frame-major, bins contiguous
    StftConfig                        cfg;
    int                               sample_rate     = 16000;
    int                               analysis_length = 0;  // pre-padding waveform length

    std::complex<double>& at(int f, int b) {
        return data[static_cast<size_t>(f) * static_cast<size_t>(bins) + static_cast<size_t>(b)];
    }
    const std::complex<double>& at(int f, int b) const {
        return data[static_cast<size_t>(f) * static_cast<size_t>(bins) + static_cast<size_t>(b)];
    }

    void validate() const {
        cfg.validate();
        if (bins != cfg.frame_length / 2 + 1)
            throw ConfigError("spectrogram: bins != frame_length/2 + 1");
        if (data.size() != static_cast<size_t>(frames) * static_cast<size_t>(bins))
            throw ConfigError("spectrogram: data size mismatch");
        if (sample_rate <= 0) throw ConfigError("spectrogram: sample_rate must be > 0");
    }
};

inline std::complex<double> compress_value(std::complex<double> v, const StftConfig& cfg) {
    const double mag = std::abs(v);
    if (mag == 0.0) return {0.0, 0.0};
    const double cm = cfg.compression_scale * std::pow(mag, cfg.compression_exponent);
    return v * (cm / mag);
}

inline std::complex<double> decompress_value(std::complex<double> v, const StftConfig& cfg) {
    const double mag = std::abs(v);
    if (mag == 0.0) return {0.0, 0.0};
    const double dm = std::pow(mag / cfg.compression_scale, 1.0 / cfg.compression_exponent);
    return v * (dm / mag);
}

namespace detail {

// Reflect padding without repeating the edge sample.
inline std::vector<double> pad_reflect(const std::vector<double>& x, int pad) {
    const int n = static_cast<int>(x.size());
    if (pad >= n) throw LengthError("stft: signal too short for reflective padding");
    std::vector<double> out(static_cast<size_t>(n + 2 * pad));
    for (int i = 0; i < pad; ++i) out[static_cast<size_t>(i)] = x[static_cast<size_t>(pad - i)];
    std::copy(x.begin(), x.end(), out.begin() + pad);
    for (int i = 0; i < pad; ++i)
        out[static_cast<size_t>(n + pad + i)] = x[static_cast<size_t>(n - 2 - i)];
    return out;
}

}  // namespace detail

// Windowed short-time Fourier transform with amplitude compression.
// Frame count is floor((padded_len - frame_length)/hop) + 1.
inline ComplexSpectrogram stft(const Waveform& wav, const StftConfig& cfg = {}) {
    cfg.validate();
    check_overlap_add(cfg);
    wav.validate();
    if (static_cast<int>(wav.size()) < cfg.frame_length)
        throw LengthError("stft: signal shorter than one frame");

    const int pad = cfg.center ? cfg.frame_length / 2 : 0;
    const std::vector<double> x =
        cfg.center ? detail::pad_reflect(wav.samples, pad) : wav.samples;

    const auto win    = make_window(cfg.window, cfg.frame_length);
    const int  frames = (static_cast<int>(x.size()) - cfg.frame_length) / cfg.hop_length + 1;

    ComplexSpectrogram spec;
    spec.frames          = frames;
    spec.bins            = cfg.bins();
    spec.cfg             = cfg;
    spec.sample_rate     = wav.sample_rate;
    spec.analysis_length = static_cast<int>(wav.size());
    spec.data.resize(static_cast<size_t>(frames) * static_cast<size_t>(spec.bins));

    std::vector<double> frame(static_cast<size_t>(cfg.frame_length));
    for (int f = 0; f < frames; ++f) {
        const int start = f * cfg.hop_length;
        for (int i = 0; i < cfg.frame_length; ++i)
            frame[static_cast<size_t>(i)] =
                x[static_cast<size_t>(start + i)] * win[static_cast<size_t>(i)];
        const auto bins = fft::rfft(frame);
        for (int b = 0; b < spec.bins; ++b)
            spec.at(f, b) = compress_value(bins[static_cast<size_t>(b)], cfg);
    }
    return spec;
}

// Inverse STFT: undo compression, weighted overlap-add with the analysis
// window, normalize by the squared-window sum, trim the padding.
inline Waveform istft(const ComplexSpectrogram& spec) {
    spec.validate();
    check_overlap_add(spec.cfg);
    const StftConfig& cfg = spec.cfg;
    const auto        win = make_window(cfg.window, cfg.frame_length);

    const int total = (spec.frames - 1) * cfg.hop_length + cfg.frame_length;
    std::vector<double> acc(static_cast<size_t>(total), 0.0);
    std::vector<double> wsum(static_cast<size_t>(total), 0.0);

    std::vector<std::complex<double>> bins(static_cast<size_t>(spec.bins));
    for (int f = 0; f < spec.frames; ++f) {
        for (int b = 0; b < spec.bins; ++b)
            bins[static_cast<size_t>(b)] = decompress_value(spec.at(f, b), cfg);
        const auto frame = fft::irfft(bins, cfg.frame_length);
        const int  start = f * cfg.hop_length;
        for (int i = 0; i < cfg.frame_length; ++i) {
            acc[static_cast<size_t>(start + i)] +=
                frame[static_cast<size_t>(i)] * win[static_cast<size_t>(i)];
            wsum[static_cast<size_t>(start + i)] +=
                win[static_cast<size_t>(i)] * win[static_cast<size_t>(i)];
        }
    }

    const int pad = cfg.center ? cfg.frame_length / 2 : 0;
    const int out_len =
        spec.analysis_length > 0 ? spec.analysis_length : total - 2 * pad;
    if (pad + out_len > total)
        throw ConfigError("istft: stored analysis_length inconsistent with frame count");

    Waveform out;
    out.sample_rate = spec.sample_rate;
    out.samples.resize(static_cast<size_t>(out_len));
    for (int i = 0; i < out_len; ++i) {
        const double w = wsum[static_cast<size_t>(pad + i)];
        out.samples[static_cast<size_t>(i)] =
            acc[static_cast<size_t>(pad + i)] / std::max(w, 1e-12);
    }
    return out;
}

}  // namespace dcse
