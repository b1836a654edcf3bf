#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <utility>

#include "dcse/common.hpp"
#include "dcse/noise.hpp"
#include "dcse/rng.hpp"
#include "dcse/room.hpp"
#include "dcse/wave.hpp"

namespace dcse {

// Which degradation stages are active.  Values are stable identifiers used in
// manifests and checkpoints.
enum class Category {
    NoiseOnly = 0,
    NoiseReverb = 1,
    NoiseDistort = 2,
    NoiseReverbDistort = 3,
    ReverbOnly = 4,
    DistortOnly = 5,
};
constexpr int kNumCategories = 6;

inline bool category_has_noise(Category c) {
    return c == Category::NoiseOnly || c == Category::NoiseReverb ||
           c == Category::NoiseDistort || c == Category::NoiseReverbDistort;
}
inline bool category_has_reverb(Category c) {
    return c == Category::NoiseReverb || c == Category::NoiseReverbDistort ||
           c == Category::ReverbOnly;
}
inline bool category_has_distortion(Category c) {
    return c == Category::NoiseDistort || c == Category::NoiseReverbDistort ||
           c == Category::DistortOnly;
}

inline const char* category_name(Category c) {
    switch (c) {
        case Category::NoiseOnly: return "noise";
        case Category::NoiseReverb: return "noise+reverb";
        case Category::NoiseDistort: return "noise+distort";
        case Category::NoiseReverbDistort: return "noise+reverb+distort";
        case Category::ReverbOnly: return "reverb";
        case Category::DistortOnly: return "distort";
    }
    throw RangeError("unknown category");
}

inline Category category_from_int(int v) {
    if (v < 0 || v >= kNumCategories) throw RangeError("category id out of range");
    return static_cast<Category>(v);
}

inline Category category_from_name(const std::string& s) {
    for (int v = 0; v < kNumCategories; ++v)
        if (s == category_name(static_cast<Category>(v))) return static_cast<Category>(v);
    throw ConfigError("unknown category name: " + s);
}

// Ground-truth description of how an utterance was degraded.  Fields are
// present exactly when the corresponding stage is active (noise_class uses
// the sentinel "none" class instead of an optional so it can feed an
// 11-way classifier directly).
struct DegradationLabel {
    Category              category = Category::NoiseOnly;
    int                   noise_class = kNoNoiseClass;
    std::optional<double> snr_db;
    std::optional<double> t60_s;
    std::optional<double> clip_alpha;

    void validate() const {
        if (category_has_noise(category)) {
            if (noise_class < 0 || noise_class >= kNoNoiseClass)
                throw ConfigError("noisy label requires a generated noise class");
            if (!snr_db) throw ConfigError("noisy label requires snr_db");
        } else {
            if (noise_class != kNoNoiseClass)
                throw ConfigError("noise-free label must use the none class");
            if (snr_db) throw ConfigError("noise-free label must not carry snr_db");
        }
        if (category_has_reverb(category)) {
            if (!t60_s) throw ConfigError("reverberant label requires t60_s");
            if (!(*t60_s >= 0.3 && *t60_s <= 1.0))
                throw RangeError("t60_s must be in [0.3, 1.0]");
        } else if (t60_s) {
            throw ConfigError("dry label must not carry t60_s");
        }
        if (category_has_distortion(category)) {
            if (!clip_alpha) throw ConfigError("distorted label requires clip_alpha");
            if (!(*clip_alpha >= 1.5 && *clip_alpha <= 5.0))
                throw RangeError("clip_alpha must be in [1.5, 5.0]");
        } else if (clip_alpha) {
            throw ConfigError("undistorted label must not carry clip_alpha");
        }
    }
};

// Regression targets used by the auxiliary heads: absent stages collapse to 0,
// and clip_alpha is mapped onto [0, 1] over its sampling range.
inline double t60_target(const DegradationLabel& lab) { return lab.t60_s.value_or(0.0); }
inline double distortion_target(const DegradationLabel& lab) {
    if (!lab.clip_alpha) return 0.0;
    return (*lab.clip_alpha - 1.5) / 3.5;
}

// Scale the noise so that 20*log10(rms(clean)/rms(scale*noise)) == snr_db,
// using a seeded random crop when the noise is longer than the clean signal.
// Returns the mixture and the applied noise scale.
struct MixResult {
    Waveform mixture;
    double   noise_scale = 0.0;
    size_t   noise_offset = 0;
};

inline MixResult mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db,
                            uint64_t seed) {
    clean.validate();
    noise.validate();
    if (clean.sample_rate != noise.sample_rate)
        throw ConfigError("sample rate mismatch between clean and noise");
    if (noise.size() < clean.size())
        throw LengthError("noise must be at least as long as the clean signal");

    const double clean_rms = clean.rms();
    if (!(clean_rms > 0.0)) throw DegenerateInputError("clean signal is silent");

    Rng          rng(seed);
    const size_t offset = rng.uniform_index(noise.size() - clean.size() + 1);

    double acc = 0.0;
    for (size_t i = 0; i < clean.size(); ++i) {
        const double v = noise.samples[offset + i];
        acc += v * v;
    }
    const double noise_rms = std::sqrt(acc / static_cast<double>(clean.size()));
    if (!(noise_rms > 0.0)) throw DegenerateInputError("noise crop is silent");

    const double scale = clean_rms / noise_rms * std::pow(10.0, -snr_db / 20.0);
    Waveform     out   = clean;
    for (size_t i = 0; i < out.size(); ++i) out.samples[i] += scale * noise.samples[offset + i];
    return MixResult{std::move(out), scale, offset};
}

// Memoryless saturator f(x) = tanh(alpha x) / tanh(alpha): odd, monotone,
// f(1) = 1, and approaching identity as alpha -> 0.
inline double soft_clip(double x, double alpha) {
    if (!(alpha > 0.0)) throw RangeError("soft_clip alpha must be positive");
    return std::tanh(alpha * x) / std::tanh(alpha);
}

inline Waveform soft_clip(const Waveform& x, double alpha) {
    Waveform out = x;
    for (auto& v : out.samples) v = soft_clip(v, alpha);
    return out;
}

// A degraded utterance plus everything needed to reproduce and supervise it.
struct DegradedItem {
    Waveform            degraded;
    DegradationLabel    label;
    std::optional<Rir>  rir;           // present iff the category has reverb
    double              noise_scale = 0.0;
};

// Apply the stages of `category` in the fixed order reverb -> noise -> clip,
// with all stochastic choices derived from `seed`.
inline DegradedItem compose_degradation(const Waveform& clean, Category category,
                                        uint64_t seed) {
    clean.validate();
    if (clean.duration_s() < 0.5) throw LengthError("clean utterance shorter than 0.5 s");

    DegradedItem item;
    item.label.category = category;
    Waveform cur = clean;
    Rng      rng(derive_seed(seed, 0));

    if (category_has_reverb(category)) {
        const double t60 = rng.uniform(0.3, 1.0);
        auto calibrated  = calibrated_room_for_t60(t60, derive_seed(seed, 1), clean.sample_rate);
        item.rir         = std::move(calibrated.rir);
        item.label.t60_s = t60;
        cur              = apply_reverb(cur, *item.rir);
    }
    if (category_has_noise(category)) {
        static constexpr std::array<double, 4> kSnrGrid{0.0, 5.0, 10.0, 15.0};
        item.label.noise_class = static_cast<int>(rng.uniform_index(kNoNoiseClass));
        item.label.snr_db      = kSnrGrid[rng.uniform_index(kSnrGrid.size())];
        const Waveform noise =
            make_noise(item.label.noise_class, cur.size() + static_cast<size_t>(cur.sample_rate) / 2,
                       cur.sample_rate, derive_seed(seed, 2));
        MixResult mixed  = mix_at_snr(cur, noise, *item.label.snr_db, derive_seed(seed, 3));
        item.noise_scale = mixed.noise_scale;
        cur              = std::move(mixed.mixture);
    }
    if (category_has_distortion(category)) {
        item.label.clip_alpha = rng.uniform(1.5, 5.0);
        cur                   = soft_clip(cur, *item.label.clip_alpha);
    }

    item.label.validate();
    item.degraded = std::move(cur);
    return item;
}

}  // namespace dcse
