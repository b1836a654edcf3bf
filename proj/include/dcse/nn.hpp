#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dcse/autodiff.hpp"
#include "dcse/rng.hpp"
#include "dcse/tensor.hpp"

namespace dcse::nn {

// Largest of {8, 4, 2, 1} dividing the channel count.
inline int groups_for(int channels) {
    for (int g : {8, 4, 2})
        if (channels % g == 0) return g;
    return 1;
}

struct Linear {
    Param w, b;
    bool  with_bias = true;

    Linear() = default;
    Linear(const std::string& name, int in, int out, Rng& rng, bool zero_init = false,
           bool bias = true)
        : with_bias(bias) {
        const double sd = zero_init ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in));
        w = Param(name + ".w", Tensor::randn({out, in}, rng, sd));
        if (with_bias) b = Param(name + ".b", Tensor::zeros({out}));
    }

    ad::Val forward(ad::Tape& t, ad::Val x) {
        return with_bias ? ad::linear(t, x, t.param(w), t.param(b))
                         : ad::linear(t, x, t.param(w));
    }

    void collect(std::vector<Param*>& out) {
        out.push_back(&w);
        if (with_bias) out.push_back(&b);
    }
};

struct Conv2d {
    Param w, b;
    int   stride = 1, ph = 0, pw = 0;

    Conv2d() = default;
    Conv2d(const std::string& name, int cin, int cout, int kh, int kw, int stride_, int ph_,
           int pw_, Rng& rng, bool zero_init = false)
        : stride(stride_), ph(ph_), pw(pw_) {
        const double fan = static_cast<double>(cin * kh * kw);
        const double sd  = zero_init ? 0.0 : 1.0 / std::sqrt(fan);
        w = Param(name + ".w", Tensor::randn({cout, cin, kh, kw}, rng, sd));
        b = Param(name + ".b", Tensor::zeros({cout}));
    }

    ad::Val forward(ad::Tape& t, ad::Val x) {
        return ad::conv2d(t, x, t.param(w), t.param(b), stride, ph, pw);
    }

    void collect(std::vector<Param*>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

struct GroupNorm {
    Param gamma, beta;
    int   groups = 1;

    GroupNorm() = default;
    GroupNorm(const std::string& name, int channels) : groups(groups_for(channels)) {
        gamma = Param(name + ".gamma", Tensor::full({channels}, 1.0));
        beta  = Param(name + ".beta", Tensor::zeros({channels}));
    }

    ad::Val forward(ad::Tape& t, ad::Val x) {
        return ad::group_norm(t, x, t.param(gamma), t.param(beta), groups);
    }

    void collect(std::vector<Param*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
};

// Raw sinusoidal position features of t*1000: [sin(w_0 u) .. sin(w_{h-1} u),
// cos(w_0 u) .. cos(w_{h-1} u)] with geometrically spaced frequencies.
inline Tensor timestep_features(double t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw ConfigError("embedding dim must be even and >= 2");
    if (!(t >= 0.0 && t <= 1.0)) throw RangeError("timestep out of [0, 1]");
    const int    half = dim / 2;
    const double u    = t * 1000.0;
    Tensor       out({dim});
    for (int i = 0; i < half; ++i) {
        const double denom = half > 1 ? static_cast<double>(half - 1) : 1.0;
        const double w     = std::exp(-std::log(10000.0) * static_cast<double>(i) / denom);
        out.data[static_cast<size_t>(i)]        = std::sin(w * u);
        out.data[static_cast<size_t>(half + i)] = std::cos(w * u);
    }
    return out;
}

// d -> 4d -> d MLP over the sinusoidal features.
struct TimeEmbed {
    Linear l1, l2;
    int    dim = 0;

    TimeEmbed() = default;
    TimeEmbed(const std::string& name, int d, Rng& rng)
        : l1(name + ".l1", d, 4 * d, rng), l2(name + ".l2", 4 * d, d, rng), dim(d) {}

    ad::Val forward(ad::Tape& t, double time) {
        ad::Val f = t.input(timestep_features(time, dim));
        return l2.forward(t, ad::silu(t, l1.forward(t, f)));
    }

    void collect(std::vector<Param*>& out) {
        l1.collect(out);
        l2.collect(out);
    }
};

// Pre-activation residual block with an embedding shift after the first
// convolution.  The second convolution starts at zero so a fresh block is the
// identity plus skip.
struct ResBlock {
    GroupNorm gn1, gn2;
    Conv2d    conv1, conv2;
    Linear    emb_proj;
    Conv2d    skip;  // 1x1, only when channel counts differ
    bool      has_skip = false;

    ResBlock() = default;
    ResBlock(const std::string& name, int cin, int cout, int emb_dim, Rng& rng)
        : gn1(name + ".gn1", cin),
          gn2(name + ".gn2", cout),
          conv1(name + ".conv1", cin, cout, 3, 3, 1, 1, 1, rng),
          conv2(name + ".conv2", cout, cout, 3, 3, 1, 1, 1, rng, /*zero_init=*/true),
          emb_proj(name + ".emb", emb_dim, cout, rng) {
        if (cin != cout) {
            skip     = Conv2d(name + ".skip", cin, cout, 1, 1, 1, 0, 0, rng);
            has_skip = true;
        }
    }

    // pre_act, when given, receives the hidden state right after the
    // embedding shift lands (the point where conditioning enters the block)
    ad::Val forward(ad::Tape& t, ad::Val x, ad::Val emb, ad::Val* pre_act = nullptr) {
        ad::Val h = conv1.forward(t, ad::silu(t, gn1.forward(t, x)));
        h         = ad::broadcast_add_chw(t, h, emb_proj.forward(t, ad::silu(t, emb)));
        if (pre_act) *pre_act = h;
        h         = conv2.forward(t, ad::silu(t, gn2.forward(t, h)));
        ad::Val s = has_skip ? skip.forward(t, x) : x;
        return ad::add(t, h, s);
    }

    void collect(std::vector<Param*>& out) {
        gn1.collect(out);
        gn2.collect(out);
        conv1.collect(out);
        conv2.collect(out);
        emb_proj.collect(out);
        if (has_skip) skip.collect(out);
    }
};

}  // namespace dcse::nn
