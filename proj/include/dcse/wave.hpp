#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dcse/common.hpp"

namespace dcse {

// Mono time-domain signal. Samples are dimensionless with nominal range
// [-1, 1]; the hard invariants are finiteness and sample_rate > 0.
struct Waveform {
    std::vector<double> samples;
    int sample_rate = 16000;

    Waveform() = default;
    Waveform(std::vector<double> s, int rate) : samples(std::move(s)), sample_rate(rate) {}

    size_t size() const { return samples.size(); }
    double duration_s() const {
        return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
    }

    double rms() const {
        if (samples.empty()) return 0.0;
        double acc = 0.0;
        for (double x : samples) acc += x * x;
        return std::sqrt(acc / static_cast<double>(samples.size()));
    }

    double peak() const {
        double m = 0.0;
        for (double x : samples) m = std::max(m, std::abs(x));
        return m;
    }

    double energy() const {
        double acc = 0.0;
        for (double x : samples) acc += x * x;
        return acc;
    }

    void validate() const {
        if (sample_rate <= 0) throw ConfigError("waveform: sample_rate must be > 0");
        if (!all_finite(samples)) throw NumericError("waveform: non-finite sample");
    }
};

// SNR of `est` against `ref` in dB; +inf when the residual is exactly zero.
inline double reconstruction_snr_db(const Waveform& ref, const Waveform& est) {
    if (ref.size() != est.size()) throw LengthError("snr: length mismatch");
    double sig = 0.0, err = 0.0;
    for (size_t i = 0; i < ref.size(); ++i) {
        sig += ref.samples[i] * ref.samples[i];
        const double d = ref.samples[i] - est.samples[i];
        err += d * d;
    }
    if (err == 0.0) return std::numeric_limits<double>::infinity();
    if (sig == 0.0) throw DegenerateInputError("snr: zero-energy reference");
    return 10.0 * std::log10(sig / err);
}

enum class WavFormat { Pcm16, Float32 };

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline uint16_t get_u16(const unsigned char* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

// RIFF/WAVE writer: mono, 16-bit PCM or 32-bit IEEE float.
inline void write_wav(const std::string& path, const Waveform& wav,
                      WavFormat fmt = WavFormat::Float32) {
    wav.validate();
    const uint32_t n          = static_cast<uint32_t>(wav.size());
    const uint16_t bits       = fmt == WavFormat::Pcm16 ? 16 : 32;
    const uint16_t block      = static_cast<uint16_t>(bits / 8);
    const uint32_t data_bytes = n * block;
    const uint16_t tag        = fmt == WavFormat::Pcm16 ? 1 : 3;

    std::string out;
    out.reserve(44 + data_bytes);
    out += "RIFF";
    detail::put_u32(out, 36 + data_bytes);
    out += "WAVEfmt ";
    detail::put_u32(out, 16);
    detail::put_u16(out, tag);
    detail::put_u16(out, 1);  // mono
    detail::put_u32(out, static_cast<uint32_t>(wav.sample_rate));
    detail::put_u32(out, static_cast<uint32_t>(wav.sample_rate) * block);
    detail::put_u16(out, block);
    detail::put_u16(out, bits);
    out += "data";
    detail::put_u32(out, data_bytes);

    if (fmt == WavFormat::Pcm16) {
        for (uint32_t i = 0; i < n; ++i) {
            double x = wav.samples[i];
            if (x > 1.0) x = 1.0;
            if (x < -1.0) x = -1.0;
            const int16_t q = static_cast<int16_t>(std::lrint(x * 32767.0));
            detail::put_u16(out, static_cast<uint16_t>(q));
        }
    } else {
        for (uint32_t i = 0; i < n; ++i) {
            const float f = static_cast<float>(wav.samples[i]);
            uint32_t bitsf;
            std::memcpy(&bitsf, &f, 4);
            detail::put_u32(out, bitsf);
        }
    }

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed: " + path);
}

// RIFF/WAVE reader. Resampling is out of scope: when expected_rate > 0 a
// mismatched file rate is an error rather than a silent conversion.
inline Waveform read_wav(const std::string& path, int expected_rate = 0) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 12 || buf.compare(0, 4, "RIFF") != 0 || buf.compare(8, 4, "WAVE") != 0)
        throw IoError("not a RIFF/WAVE file: " + path);

    const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data());
    size_t   pos      = 12;
    uint16_t tag      = 0;
    uint16_t channels = 0;
    uint16_t bits     = 0;
    uint32_t rate     = 0;
    size_t   data_off = 0;
    uint32_t data_len = 0;

    while (pos + 8 <= buf.size()) {
        const std::string id(buf, pos, 4);
        const uint32_t    sz = detail::get_u32(p + pos + 4);
        pos += 8;
        if (pos + sz > buf.size()) throw IoError("truncated chunk in: " + path);
        if (id == "fmt ") {
            if (sz < 16) throw IoError("bad fmt chunk in: " + path);
            tag      = detail::get_u16(p + pos);
            channels = detail::get_u16(p + pos + 2);
            rate     = detail::get_u32(p + pos + 4);
            bits     = detail::get_u16(p + pos + 14);
        } else if (id == "data") {
            data_off = pos;
            data_len = sz;
        }
        pos += sz + (sz & 1);
    }
    if (data_off == 0) throw IoError("no data chunk in: " + path);
    if (channels != 1) throw IoError("only mono supported: " + path);
    if (expected_rate > 0 && rate != static_cast<uint32_t>(expected_rate))
        throw ConfigError("sample rate mismatch (resampling unsupported): " + path);

    Waveform wav;
    wav.sample_rate = static_cast<int>(rate);
    if (tag == 1 && bits == 16) {
        const uint32_t n = data_len / 2;
        wav.samples.resize(n);
        for (uint32_t i = 0; i < n; ++i) {
            const int16_t q = static_cast<int16_t>(detail::get_u16(p + data_off + 2 * i));
            wav.samples[i]  = static_cast<double>(q) / 32767.0;
        }
    } else if (tag == 3 && bits == 32) {
        const uint32_t n = data_len / 4;
        wav.samples.resize(n);
        for (uint32_t i = 0; i < n; ++i) {
            const uint32_t b = detail::get_u32(p + data_off + 4 * i);
            float          v;
            std::memcpy(&v, &b, 4);
            wav.samples[i] = static_cast<double>(v);
        }
    } else {
        throw IoError("unsupported wav encoding (want PCM16 or float32): " + path);
    }
    return wav;
}

}  // namespace dcse
