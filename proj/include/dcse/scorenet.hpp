#pragma once

#include <complex>
#include <string>
#include <vector>

#include "dcse/autodiff.hpp"
#include "dcse/nn.hpp"
#include "dcse/rng.hpp"
#include "dcse/sde.hpp"

namespace dcse {

// How the degradation-conditioning vector reaches the score network.
//   LayerWise        adds it to the timestep embedding seen by every block
//   InputAddition    maps it once onto the stem feature map, nowhere else
//   NoEncoder        no conditioning input exists
//   ZeroConditioning layer-wise architecture evaluated with a zero vector
enum class InjectionMode { LayerWise, InputAddition, NoEncoder, ZeroConditioning };

inline const char* injection_mode_name(InjectionMode m) {
    switch (m) {
        case InjectionMode::LayerWise: return "layerwise";
        case InjectionMode::InputAddition: return "input_addition";
        case InjectionMode::NoEncoder: return "no_encoder";
        case InjectionMode::ZeroConditioning: return "zero_conditioning";
    }
    throw RangeError("unknown injection mode");
}

inline InjectionMode injection_mode_from_name(const std::string& s) {
    for (InjectionMode m : {InjectionMode::LayerWise, InjectionMode::InputAddition,
                            InjectionMode::NoEncoder, InjectionMode::ZeroConditioning})
        if (s == injection_mode_name(m)) return m;
    throw ConfigError("unknown injection mode: " + s);
}

struct ScoreNetConfig {
    int              in_channels   = 4;  // stacked real/imag of (x_t, y)
    int              out_channels  = 2;
    int              base_channels = 16;
    std::vector<int> channel_mults{1, 2, 2};
    int              blocks_per_res = 2;
    int              embed_dim      = 128;
    InjectionMode    injection      = InjectionMode::LayerWise;

    int levels() const { return static_cast<int>(channel_mults.size()); }
    int total_blocks() const { return (2 * levels() - 1) * blocks_per_res; }
    // spatial dims must survive `levels-1` halvings and doublings
    int spatial_multiple() const { return 1 << (levels() - 1); }

    void validate() const {
        if (in_channels < 1 || out_channels < 1) throw ConfigError("channel counts must be positive");
        if (base_channels < 1) throw ConfigError("base_channels must be positive");
        if (channel_mults.empty()) throw ConfigError("need at least one resolution level");
        for (int m : channel_mults)
            if (m < 1) throw ConfigError("channel multipliers must be positive");
        if (blocks_per_res < 1) throw ConfigError("blocks_per_res must be positive");
        if (embed_dim < 2 || embed_dim % 2 != 0) throw ConfigError("embed_dim must be even");
    }

    // the dilution argument needs genuine depth; training-facing code insists
    void validate_depth() const {
        validate();
        if (total_blocks() < 6) throw ConfigError("need at least 6 residual blocks");
    }
};

// NCSN++-flavoured U-Net: strided-conv downsampling, nearest-neighbour
// upsampling, concatenated skips, one shared (possibly conditioning-injected)
// embedding consumed by every residual block.
class ScoreNet {
public:
    ScoreNet() = default;

    ScoreNet(const ScoreNetConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        const int base = cfg_.base_channels;
        time_embed_ = nn::TimeEmbed("time_embed", cfg_.embed_dim, rng);
        stem_ = nn::Conv2d("stem", cfg_.in_channels, base, 3, 3, 1, 1, 1, rng);
        if (cfg_.injection == InjectionMode::InputAddition)
            cond_input_map_ =
                nn::Linear("cond_input_map", cfg_.embed_dim, base, rng, /*zero_init=*/true);

        const int L = cfg_.levels();
        int       cur = base;
        for (int lvl = 0; lvl < L; ++lvl) {
            const int ch = base * cfg_.channel_mults[static_cast<size_t>(lvl)];
            for (int b = 0; b < cfg_.blocks_per_res; ++b) {
                down_blocks_.emplace_back("down" + std::to_string(lvl) + "b" + std::to_string(b),
                                          cur, ch, cfg_.embed_dim, rng);
                cur = ch;
            }
            if (lvl + 1 < L) {
                down_samplers_.emplace_back("downsample" + std::to_string(lvl), cur, cur, 3, 3,
                                            2, 1, 1, rng);
                skip_channels_.push_back(cur);
            }
        }
        for (int lvl = L - 2; lvl >= 0; --lvl) {
            const int ch = base * cfg_.channel_mults[static_cast<size_t>(lvl)];
            up_samplers_.emplace_back("upsample" + std::to_string(lvl), cur, cur, 3, 3, 1, 1, 1,
                                      rng);
            int in_ch = cur + skip_channels_[static_cast<size_t>(lvl)];
            for (int b = 0; b < cfg_.blocks_per_res; ++b) {
                up_blocks_.emplace_back("up" + std::to_string(lvl) + "b" + std::to_string(b),
                                        in_ch, ch, cfg_.embed_dim, rng);
                in_ch = ch;
            }
            cur = ch;
        }
        head_norm_ = nn::GroupNorm("head.norm", cur);
        head_conv_ = nn::Conv2d("head.conv", cur, cfg_.out_channels, 3, 3, 1, 1, 1, rng,
                                /*zero_init=*/true);
    }

    const ScoreNetConfig& config() const { return cfg_; }

    // x: [in_channels, H, W]; cond: length-embed_dim vector or invalid.
    // block_acts, when given, receives the post-injection hidden state of
    // every residual block in execution order (the activation the embedding
    // pathway feeds; block outputs mask it at init because the second conv
    // starts at zero).
    ad::Val forward(ad::Tape& t, ad::Val x, double time, ad::Val cond = {},
                    std::vector<ad::Val>* block_acts = nullptr) {
        const Tensor& X = t.val(x);
        if (X.rank() != 3 || X.dim(0) != cfg_.in_channels)
            throw ConfigError("score input must be [in_channels, H, W]");
        if (cond.valid()) {
            const Tensor& C = t.val(cond);
            if (C.rank() != 1 || C.dim(0) != cfg_.embed_dim)
                throw ConfigError("conditioning vector must have embed_dim entries");
        }
        const bool wants_cond = cfg_.injection == InjectionMode::LayerWise ||
                                cfg_.injection == InjectionMode::InputAddition;
        if (wants_cond && !cond.valid())
            throw ConfigError("injection mode requires a conditioning vector");
        if (cfg_.injection == InjectionMode::NoEncoder && cond.valid())
            throw ConfigError("no-encoder mode must not receive conditioning");

        const int H = X.dim(1), W = X.dim(2);
        const int m = cfg_.spatial_multiple();
        const int Hp = (H + m - 1) / m * m, Wp = (W + m - 1) / m * m;
        ad::Val   h = (Hp != H || Wp != W) ? ad::pad_hw(t, x, Hp, Wp) : x;

        ad::Val e = time_embed_.forward(t, time);
        if (cfg_.injection == InjectionMode::LayerWise) e = ad::add(t, e, cond);

        h = stem_.forward(t, h);
        if (cfg_.injection == InjectionMode::InputAddition)
            h = ad::broadcast_add_chw(t, h, cond_input_map_.forward(t, cond));

        std::vector<ad::Val> skips;
        size_t               di = 0;
        const int            L = cfg_.levels();
        for (int lvl = 0; lvl < L; ++lvl) {
            for (int b = 0; b < cfg_.blocks_per_res; ++b) {
                ad::Val pre;
                h = down_blocks_[di++].forward(t, h, e, block_acts ? &pre : nullptr);
                if (block_acts) block_acts->push_back(pre);
            }
            if (lvl + 1 < L) {
                skips.push_back(h);
                h = down_samplers_[static_cast<size_t>(lvl)].forward(t, h);
            }
        }
        size_t ui = 0;
        for (int lvl = L - 2; lvl >= 0; --lvl) {
            h = up_samplers_[static_cast<size_t>(L - 2 - lvl)].forward(t, ad::nn_upsample2(t, h));
            h = ad::concat_channels(t, h, skips[static_cast<size_t>(lvl)]);
            for (int b = 0; b < cfg_.blocks_per_res; ++b) {
                ad::Val pre;
                h = up_blocks_[ui++].forward(t, h, e, block_acts ? &pre : nullptr);
                if (block_acts) block_acts->push_back(pre);
            }
        }
        h = head_conv_.forward(t, ad::silu(t, head_norm_.forward(t, h)));
        if (Hp != H || Wp != W) h = ad::crop_hw(t, h, H, W);
        return h;
    }

    void collect(std::vector<Param*>& out) {
        time_embed_.collect(out);
        stem_.collect(out);
        if (cfg_.injection == InjectionMode::InputAddition) cond_input_map_.collect(out);
        for (auto& b : down_blocks_) b.collect(out);
        for (auto& s : down_samplers_) s.collect(out);
        for (auto& s : up_samplers_) s.collect(out);
        for (auto& b : up_blocks_) b.collect(out);
        head_norm_.collect(out);
        head_conv_.collect(out);
    }

    std::vector<Param*> params() {
        std::vector<Param*> out;
        collect(out);
        return out;
    }

    size_t param_count() {
        size_t n = 0;
        for (auto* p : params()) n += p->value.numel();
        return n;
    }

private:
    ScoreNetConfig        cfg_;
    nn::TimeEmbed         time_embed_;
    nn::Conv2d            stem_;
    nn::Linear            cond_input_map_;
    std::vector<nn::ResBlock> down_blocks_, up_blocks_;
    std::vector<nn::Conv2d>   down_samplers_, up_samplers_;
    std::vector<int>          skip_channels_;
    nn::GroupNorm         head_norm_;
    nn::Conv2d            head_conv_;
};

// ---- spectrogram <-> network tensor conversion -----------------------------
// Grids are frame-major complex arrays (frames x bins); network tensors are
// [2, bins, frames] with real parts in channel 0.

inline Tensor grid_to_tensor(const Grid& g, int frames, int bins) {
    if (g.size() != static_cast<size_t>(frames) * static_cast<size_t>(bins))
        throw LengthError("grid size does not match frames x bins");
    Tensor t({2, bins, frames});
    for (int f = 0; f < frames; ++f)
        for (int b = 0; b < bins; ++b) {
            const auto& v = g[static_cast<size_t>(f) * bins + b];
            t.at3(0, b, f) = v.real();
            t.at3(1, b, f) = v.imag();
        }
    return t;
}

inline Grid tensor_to_grid(const Tensor& t) {
    if (t.rank() != 3 || t.dim(0) != 2) throw ConfigError("expected a [2, bins, frames] tensor");
    const int bins = t.dim(1), frames = t.dim(2);
    Grid g(static_cast<size_t>(frames) * bins);
    for (int f = 0; f < frames; ++f)
        for (int b = 0; b < bins; ++b)
            g[static_cast<size_t>(f) * bins + b] = {t.at3(0, b, f), t.at3(1, b, f)};
    return g;
}

// stack (x_t, y) into the network input layout
inline Tensor stack_observation(const Grid& xt, const Grid& y, int frames, int bins) {
    Tensor a = grid_to_tensor(xt, frames, bins);
    Tensor b = grid_to_tensor(y, frames, bins);
    Tensor out({4, bins, frames});
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<ptrdiff_t>(a.numel()));
    return out;
}

}  // namespace dcse
