#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "dcse/autodiff.hpp"
#include "dcse/fft.hpp"
#include "dcse/nn.hpp"
#include "dcse/rng.hpp"
#include "dcse/wave.hpp"

namespace dcse {

// Degradation encoder: log-mel front end, strided conv feature extractor,
// mean pooling to a shared representation h, three auxiliary heads, branch
// projections, and a fusion MLP producing the conditioning vector consumed by
// the score network's embedding pathway.
struct EncoderConfig {
    int d_mel = 40;
    int d_w   = 64;   // frame-level feature width after the conv stack
    int d_h   = 64;   // shared representation
    int d_b   = 32;   // per-branch embedding
    int d_out = 128;  // fused conditioning vector (score net embed_dim)

    int    frame_length = 400;  // 25 ms at 16 kHz
    int    hop_length   = 160;  // 10 ms
    double log_floor    = 1e-8;
    double cfg_dropout_p = 0.1;

    void validate() const {
        if (d_mel < 1 || d_w < 1 || d_h < 1 || d_b < 1 || d_out < 1)
            throw ConfigError("encoder dims must be positive");
        if (frame_length < 2 || hop_length < 1 || hop_length > frame_length)
            throw ConfigError("bad mel framing");
        if (!(log_floor > 0.0)) throw ConfigError("log floor must be positive");
        if (!(cfg_dropout_p >= 0.0 && cfg_dropout_p <= 1.0))
            throw ConfigError("dropout probability must be in [0, 1]");
    }
};

namespace detail {

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// triangular filters [n_mels, n_bins] over the one-sided spectrum
inline std::vector<double> mel_filterbank(int n_mels, int n_bins, int fft_size,
                                          int sample_rate) {
    const double fmax = sample_rate / 2.0;
    std::vector<double> centers(static_cast<size_t>(n_mels) + 2);
    const double m_lo = hz_to_mel(0.0), m_hi = hz_to_mel(fmax);
    for (int i = 0; i < n_mels + 2; ++i)
        centers[static_cast<size_t>(i)] =
            mel_to_hz(m_lo + (m_hi - m_lo) * i / (n_mels + 1));

    std::vector<double> fb(static_cast<size_t>(n_mels) * n_bins, 0.0);
    for (int m = 0; m < n_mels; ++m) {
        const double lo = centers[static_cast<size_t>(m)];
        const double mid = centers[static_cast<size_t>(m) + 1];
        const double hi = centers[static_cast<size_t>(m) + 2];
        for (int k = 0; k < n_bins; ++k) {
            const double f = static_cast<double>(k) * sample_rate / fft_size;
            double       w = 0.0;
            if (f > lo && f < mid) w = (f - lo) / (mid - lo);
            else if (f >= mid && f < hi) w = (hi - f) / (hi - mid);
            fb[static_cast<size_t>(m) * n_bins + k] = w;
        }
    }
    return fb;
}

}  // namespace detail

// Fixed (non-trainable) log-mel analysis: [d_mel, T] with
// T = (len - frame_length) / hop_length + 1.
inline Tensor log_mel_features(const Waveform& wav, const EncoderConfig& cfg) {
    cfg.validate();
    wav.validate();
    if (wav.size() < static_cast<size_t>(wav.sample_rate) / 4)
        throw LengthError("encoder input shorter than 0.25 s");
    if (wav.size() < static_cast<size_t>(cfg.frame_length))
        throw LengthError("encoder input shorter than one analysis frame");

    int fft_size = 1;
    while (fft_size < cfg.frame_length) fft_size <<= 1;
    const int n_bins = fft_size / 2 + 1;
    const int T = static_cast<int>((wav.size() - static_cast<size_t>(cfg.frame_length)) /
                                   static_cast<size_t>(cfg.hop_length)) + 1;

    std::vector<double> window(static_cast<size_t>(cfg.frame_length));
    for (int i = 0; i < cfg.frame_length; ++i)
        window[static_cast<size_t>(i)] =
            0.5 - 0.5 * std::cos(2.0 * kPi * i / cfg.frame_length);
    const auto fb = detail::mel_filterbank(cfg.d_mel, n_bins, fft_size, wav.sample_rate);

    Tensor out({cfg.d_mel, T});
    std::vector<double> frame(static_cast<size_t>(fft_size), 0.0);
    for (int f = 0; f < T; ++f) {
        const size_t start = static_cast<size_t>(f) * static_cast<size_t>(cfg.hop_length);
        for (int i = 0; i < cfg.frame_length; ++i)
            frame[static_cast<size_t>(i)] =
                wav.samples[start + static_cast<size_t>(i)] * window[static_cast<size_t>(i)];
        auto spec = fft::rfft(frame);
        for (int m = 0; m < cfg.d_mel; ++m) {
            double acc = 0.0;
            for (int k = 0; k < n_bins; ++k)
                acc += fb[static_cast<size_t>(m) * n_bins + k] * std::norm(spec[static_cast<size_t>(k)]);
            out.data[static_cast<size_t>(m) * T + f] = std::log(acc + cfg.log_floor);
        }
    }
    return out;
}

struct HeadPredictions {
    Tensor noise_logits;  // 11 entries
    double t60_pred     = 0.0;
    double distort_pred = 0.0;
};

struct ConditioningBundle {
    Tensor              h;
    Tensor              c_noise, c_reverb, c_distort;
    Tensor              c_extra;
    std::array<bool, 3> branch_mask{true, true, true};  // false = dropped
    HeadPredictions     head;
};

// true = branch kept; each branch independently dropped with probability p
inline std::array<bool, 3> draw_branch_mask(double p, Rng& rng) {
    if (!(p >= 0.0 && p <= 1.0)) throw RangeError("dropout probability must be in [0, 1]");
    return {!rng.bernoulli(p), !rng.bernoulli(p), !rng.bernoulli(p)};
}

// confidence-style weights: classifier = peak softmax mass; regressors = 1
// inside their nominal domain, decaying with the out-of-range excursion
inline std::array<double, 3> adaptive_weights(const HeadPredictions& pred) {
    if (pred.noise_logits.numel() != 11) throw ConfigError("expected 11 noise logits");
    double m = pred.noise_logits.data[0];
    for (double v : pred.noise_logits.data) m = std::max(m, v);
    double z = 0.0, top = 0.0;
    for (double v : pred.noise_logits.data) {
        const double e = std::exp(v - m);
        z += e;
        top = std::max(top, e);
    }
    auto in_domain = [](double v, double lo, double hi) {
        const double c = std::min(std::max(v, lo), hi);
        return 1.0 / (1.0 + std::abs(v - c));
    };
    return {top / z, in_domain(pred.t60_pred, 0.0, 1.0), in_domain(pred.distort_pred, 0.0, 1.0)};
}

class DegradationEncoder {
public:
    DegradationEncoder() = default;

    DegradationEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        conv1_ = nn::Conv2d("enc.conv1", cfg.d_mel, cfg.d_w, 1, 3, 2, 0, 1, rng);
        conv2_ = nn::Conv2d("enc.conv2", cfg.d_w, cfg.d_w, 1, 3, 2, 0, 1, rng);
        proj_  = nn::Linear("enc.proj", cfg.d_w, cfg.d_h, rng);
        noise_h1_ = nn::Linear("enc.noise.h1", cfg.d_h, cfg.d_h, rng);
        noise_h2_ = nn::Linear("enc.noise.h2", cfg.d_h, 11, rng);
        t60_h1_   = nn::Linear("enc.t60.h1", cfg.d_h, cfg.d_h, rng);
        t60_h2_   = nn::Linear("enc.t60.h2", cfg.d_h, 1, rng);
        dist_h1_  = nn::Linear("enc.dist.h1", cfg.d_h, cfg.d_h, rng);
        dist_h2_  = nn::Linear("enc.dist.h2", cfg.d_h, 1, rng);
        w_noise_   = nn::Linear("enc.w_noise", cfg.d_h, cfg.d_b, rng, false, /*bias=*/false);
        w_reverb_  = nn::Linear("enc.w_reverb", cfg.d_h, cfg.d_b, rng, false, /*bias=*/false);
        w_distort_ = nn::Linear("enc.w_distort", cfg.d_h, cfg.d_b, rng, false, /*bias=*/false);
        fuse1_ = nn::Linear("enc.fuse1", 3 * cfg.d_b, cfg.d_out, rng);
        fuse2_ = nn::Linear("enc.fuse2", cfg.d_out, cfg.d_out, rng, /*zero_init=*/true);
    }

    const EncoderConfig& config() const { return cfg_; }

    struct Forward {
        ad::Val             features;  // [d_w, T'']
        ad::Val             h;
        ad::Val             noise_logits, t60_pred, distort_pred;
        ad::Val             c_noise, c_reverb, c_distort;
        ad::Val             c_extra;
        std::array<bool, 3> branch_mask;
    };

    // trainable conv stack over fixed log-mel features: [d_w, T'']
    ad::Val extract_features(ad::Tape& t, const Waveform& wav) {
        return extract_from_mel(t, log_mel_features(wav, cfg_));
    }

    // entry point for precomputed (or externally supplied) [d_mel, T] features
    ad::Val extract_from_mel(ad::Tape& t, const Tensor& mel) {
        if (mel.rank() != 2 || mel.dim(0) != cfg_.d_mel)
            throw ConfigError("mel features must be [d_mel, T]");
        const int T = mel.dim(1);
        ad::Val x = t.input(Tensor::from({cfg_.d_mel, 1, T}, mel.data));
        x = ad::silu(t, conv1_.forward(t, x));
        x = ad::silu(t, conv2_.forward(t, x));
        const Tensor& v = t.val(x);
        return ad::reshape(t, x, {cfg_.d_w, v.dim(2)});
    }

    ad::Val pool(ad::Tape& t, ad::Val features) { return ad::mean_last(t, features); }

    // temporal mean followed by a nonlinear projection to d_h
    ad::Val pool_project(ad::Tape& t, ad::Val features) {
        return ad::silu(t, proj_.forward(t, pool(t, features)));
    }

    struct HeadVals {
        ad::Val noise_logits, t60_pred, distort_pred;
    };

    HeadVals heads(ad::Tape& t, ad::Val h) {
        HeadVals out;
        out.noise_logits = noise_h2_.forward(t, ad::silu(t, noise_h1_.forward(t, h)));
        out.t60_pred     = t60_h2_.forward(t, ad::silu(t, t60_h1_.forward(t, h)));
        out.distort_pred = dist_h2_.forward(t, ad::silu(t, dist_h1_.forward(t, h)));
        return out;
    }

    // c_k = W_k h in the fixed order noise, reverb, distort; no bias terms
    std::array<ad::Val, 3> branch_embed(ad::Tape& t, ad::Val h) {
        return {w_noise_.forward(t, h), w_reverb_.forward(t, h), w_distort_.forward(t, h)};
    }

    Forward forward(ad::Tape& t, const Waveform& wav,
                    const std::array<bool, 3>& branch_mask = {true, true, true},
                    const std::array<double, 3>& weights = {1.0, 1.0, 1.0}) {
        return forward_from_mel(t, log_mel_features(wav, cfg_), branch_mask, weights);
    }

    Forward forward_from_mel(ad::Tape& t, const Tensor& mel,
                             const std::array<bool, 3>& branch_mask = {true, true, true},
                             const std::array<double, 3>& weights = {1.0, 1.0, 1.0}) {
        for (double w : weights)
            if (!(w >= 0.0)) throw RangeError("branch weights must be >= 0");

        Forward out;
        out.branch_mask = branch_mask;
        out.features    = extract_from_mel(t, mel);
        out.h           = pool_project(t, out.features);

        HeadVals hv      = heads(t, out.h);
        out.noise_logits = hv.noise_logits;
        out.t60_pred     = hv.t60_pred;
        out.distort_pred = hv.distort_pred;

        auto emb  = branch_embed(t, out.h);
        auto keep = [&](ad::Val c, bool k) {
            return k ? c : t.input(Tensor::zeros({cfg_.d_b}));
        };
        out.c_noise   = keep(emb[0], branch_mask[0]);
        out.c_reverb  = keep(emb[1], branch_mask[1]);
        out.c_distort = keep(emb[2], branch_mask[2]);
        auto weighted = [&](ad::Val c, double w) {
            return w == 1.0 ? c : ad::mul_scalar(t, c, w);
        };
        out.c_extra = fuse_on_tape(t, weighted(out.c_noise, weights[0]),
                                   weighted(out.c_reverb, weights[1]),
                                   weighted(out.c_distort, weights[2]));
        return out;
    }

    ad::Val fuse_on_tape(ad::Tape& t, ad::Val c_noise, ad::Val c_reverb, ad::Val c_distort) {
        for (ad::Val c : {c_noise, c_reverb, c_distort})
            if (t.val(c).numel() != static_cast<size_t>(cfg_.d_b))
                throw LengthError("branch embedding has wrong width");
        ad::Val cat = ad::concat_vec(t, {c_noise, c_reverb, c_distort});
        return fuse2_.forward(t, ad::silu(t, fuse1_.forward(t, cat)));
    }

    // ---- plain-tensor evaluation path ----

    // weight of exactly 1.0 skips the scaling multiply, so uniform weights and
    // an omitted weights argument produce bitwise-identical fusions
    Tensor fuse(const Tensor& c_noise, const Tensor& c_reverb, const Tensor& c_distort,
                const std::array<double, 3>& weights = {1.0, 1.0, 1.0}) {
        ad::Tape t(false);
        auto scaled = [&](const Tensor& c, double w) {
            ad::Val v = t.input(c);
            return w == 1.0 ? v : ad::mul_scalar(t, v, w);
        };
        return t.val(fuse_on_tape(t, scaled(c_noise, weights[0]), scaled(c_reverb, weights[1]),
                                  scaled(c_distort, weights[2])));
    }

    ConditioningBundle encode(const Waveform& wav,
                              const std::array<bool, 3>& branch_mask = {true, true, true},
                              const std::array<double, 3>& weights = {1.0, 1.0, 1.0}) {
        ad::Tape t(false);
        auto     f = forward(t, wav, branch_mask, weights);
        ConditioningBundle b;
        b.h                 = t.val(f.h);
        b.c_noise           = t.val(f.c_noise);
        b.c_reverb          = t.val(f.c_reverb);
        b.c_distort         = t.val(f.c_distort);
        b.c_extra           = t.val(f.c_extra);
        b.branch_mask       = branch_mask;
        b.head.noise_logits = t.val(f.noise_logits);
        b.head.t60_pred     = t.val(f.t60_pred).data[0];
        b.head.distort_pred = t.val(f.distort_pred).data[0];
        return b;
    }

    // redraw the branch mask, zero dropped embeddings, recompute the fusion;
    // head predictions pass through untouched
    ConditioningBundle cfg_dropout(const ConditioningBundle& in, double p, Rng& rng) {
        ConditioningBundle b = in;
        b.branch_mask        = draw_branch_mask(p, rng);
        auto masked = [&](const Tensor& c, bool keep) {
            return keep ? c : Tensor::zeros({cfg_.d_b});
        };
        b.c_noise   = masked(in.c_noise, b.branch_mask[0]);
        b.c_reverb  = masked(in.c_reverb, b.branch_mask[1]);
        b.c_distort = masked(in.c_distort, b.branch_mask[2]);
        ad::Tape t(false);
        b.c_extra = t.val(fuse_on_tape(t, t.input(b.c_noise), t.input(b.c_reverb),
                                       t.input(b.c_distort)));
        return b;
    }

    void collect(std::vector<Param*>& out) {
        conv1_.collect(out);
        conv2_.collect(out);
        proj_.collect(out);
        noise_h1_.collect(out);
        noise_h2_.collect(out);
        t60_h1_.collect(out);
        t60_h2_.collect(out);
        dist_h1_.collect(out);
        dist_h2_.collect(out);
        w_noise_.collect(out);
        w_reverb_.collect(out);
        w_distort_.collect(out);
        fuse1_.collect(out);
        fuse2_.collect(out);
    }

    std::vector<Param*> params() {
        std::vector<Param*> out;
        collect(out);
        return out;
    }

private:
    EncoderConfig cfg_;
    nn::Conv2d    conv1_, conv2_;
    nn::Linear    proj_;
    nn::Linear    noise_h1_, noise_h2_, t60_h1_, t60_h2_, dist_h1_, dist_h2_;
    nn::Linear    w_noise_, w_reverb_, w_distort_;
    nn::Linear    fuse1_, fuse2_;
};

}  // namespace dcse
