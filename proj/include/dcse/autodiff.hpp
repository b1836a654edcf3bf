#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <utility>
#include <vector>

#include "dcse/common.hpp"
#include "dcse/tensor.hpp"

namespace dcse::ad {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

struct Val {
    int i = -1;
    bool valid() const { return i >= 0; }
};

// Reverse-mode tape.  Nodes are appended in creation order; backward walks
// them in reverse, each node scattering its output gradient into its inputs
// via a recorded closure.  Leaf nodes bound to a Param flush their gradient
// into the param's accumulator at the end of the pass.
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}
    Tape(const Tape&)            = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }

    Val input(Tensor v) { return push(std::move(v), false, nullptr, {}); }

    Val param(Param& p) { return push(p.value, true, &p, {}); }

    Val scalar(double v) { return input(Tensor::from({1}, {v})); }

    const Tensor& val(Val v) const { return node(v).value; }

    Tensor& grad(Val v) {
        Node& n = node(v);
        if (n.grad.numel() == 0) n.grad = Tensor::zeros(n.value.shape);
        return n.grad;
    }

    bool needs_grad(Val v) const { return node(v).needs_grad; }

    size_t size() const { return nodes_.size(); }

    void backward(Val loss) {
        Node& top = node(loss);
        if (top.value.numel() != 1) throw ConfigError("backward requires a scalar loss");
        if (!recording_) throw ConfigError("backward on a non-recording tape");
        grad(loss).data[0] = 1.0;
        for (size_t i = static_cast<size_t>(loss.i) + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.needs_grad && n.back && n.grad.numel() != 0) n.back();
        }
        for (size_t i = 0; i <= static_cast<size_t>(loss.i); ++i) {
            Node& n = nodes_[i];
            if (n.sink && n.grad.numel() != 0)
                for (size_t k = 0; k < n.grad.numel(); ++k) n.sink->grad.data[k] += n.grad.data[k];
        }
    }

    // --- used by op implementations ---

    Val make(Tensor out, std::initializer_list<Val> deps, std::function<void()> back) {
        bool ng = false;
        if (recording_)
            for (Val d : deps) ng = ng || node(d).needs_grad;
        return push(std::move(out), ng, nullptr, ng ? std::move(back) : std::function<void()>{});
    }

    Val make(Tensor out, const std::vector<Val>& deps, std::function<void()> back) {
        bool ng = false;
        if (recording_)
            for (Val d : deps) ng = ng || node(d).needs_grad;
        return push(std::move(out), ng, nullptr, ng ? std::move(back) : std::function<void()>{});
    }

    // accumulate `g` into the gradient of `v` if it participates in backward
    void accum(Val v, const Tensor& g) {
        if (!node(v).needs_grad) return;
        Tensor& dst = grad(v);
        if (!dst.same_shape(g)) throw LengthError("gradient shape mismatch");
        for (size_t i = 0; i < g.numel(); ++i) dst.data[i] += g.data[i];
    }

private:
    struct Node {
        Tensor                value;
        Tensor                grad;
        bool                  needs_grad = false;
        Param*                sink       = nullptr;
        std::function<void()> back;
    };

    Val push(Tensor v, bool ng, Param* sink, std::function<void()> back) {
        nodes_.push_back(Node{std::move(v), {}, ng && recording_, sink, std::move(back)});
        return Val{static_cast<int>(nodes_.size() - 1)};
    }

    Node& node(Val v) {
        if (!v.valid() || static_cast<size_t>(v.i) >= nodes_.size())
            throw RangeError("invalid tape value");
        return nodes_[static_cast<size_t>(v.i)];
    }
    const Node& node(Val v) const { return const_cast<Tape*>(this)->node(v); }

    std::vector<Node> nodes_;
    bool              recording_;
};

// ---------------------------------------------------------------- elementwise

inline Val add(Tape& t, Val a, Val b) {
    const Tensor &A = t.val(a), &B = t.val(b);
    if (!A.same_shape(B)) throw LengthError("add: shape mismatch");
    Tensor out = A;
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] += B.data[i];
    return t.make(std::move(out), {a, b}, [&t, a, b, self = Val{static_cast<int>(t.size())}] {
        const Tensor& g = t.grad(self);
        t.accum(a, g);
        t.accum(b, g);
    });
}

inline Val sub(Tape& t, Val a, Val b) {
    const Tensor &A = t.val(a), &B = t.val(b);
    if (!A.same_shape(B)) throw LengthError("sub: shape mismatch");
    Tensor out = A;
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] -= B.data[i];
    return t.make(std::move(out), {a, b}, [&t, a, b, self = Val{static_cast<int>(t.size())}] {
        const Tensor& g = t.grad(self);
        t.accum(a, g);
        Tensor neg = g;
        for (auto& v : neg.data) v = -v;
        t.accum(b, neg);
    });
}

inline Val mul(Tape& t, Val a, Val b) {
    const Tensor &A = t.val(a), &B = t.val(b);
    if (!A.same_shape(B)) throw LengthError("mul: shape mismatch");
    Tensor out = A;
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] *= B.data[i];
    return t.make(std::move(out), {a, b}, [&t, a, b, self = Val{static_cast<int>(t.size())}] {
        const Tensor& g = t.grad(self);
        Tensor ga = g, gb = g;
        const Tensor &A2 = t.val(a), &B2 = t.val(b);
        for (size_t i = 0; i < g.numel(); ++i) {
            ga.data[i] *= B2.data[i];
            gb.data[i] *= A2.data[i];
        }
        t.accum(a, ga);
        t.accum(b, gb);
    });
}

inline Val mul_scalar(Tape& t, Val a, double s) {
    Tensor out = t.val(a);
    for (auto& v : out.data) v *= s;
    return t.make(std::move(out), {a}, [&t, a, s, self = Val{static_cast<int>(t.size())}] {
        Tensor g = t.grad(self);
        for (auto& v : g.data) v *= s;
        t.accum(a, g);
    });
}

inline Val silu(Tape& t, Val a) {
    Tensor out = t.val(a);
    for (auto& v : out.data) v = v / (1.0 + std::exp(-v));
    return t.make(std::move(out), {a}, [&t, a, self = Val{static_cast<int>(t.size())}] {
        const Tensor& g = t.grad(self);
        const Tensor& A = t.val(a);
        Tensor ga = g;
        for (size_t i = 0; i < g.numel(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-A.data[i]));
            ga.data[i] *= s * (1.0 + A.data[i] * (1.0 - s));
        }
        t.accum(a, ga);
    });
}

inline Val reshape(Tape& t, Val a, std::vector<int> shape) {
    const Tensor& A = t.val(a);
    if (Tensor::count(shape) != A.numel()) throw LengthError("reshape: element count mismatch");
    Tensor out = Tensor::from(std::move(shape), A.data);
    return t.make(std::move(out), {a}, [&t, a, self = Val{static_cast<int>(t.size())}] {
        Tensor g = t.grad(self);
        g.shape  = t.val(a).shape;
        t.accum(a, g);
    });
}

// ---------------------------------------------------------------- reductions

inline Val sum_squares(Tape& t, Val a) {
    const Tensor& A = t.val(a);
    double acc = 0.0;
    for (double v : A.data) acc += v * v;
    Tensor out = Tensor::from({1}, {acc});
    return t.make(std::move(out), {a}, [&t, a, self = Val{static_cast<int>(t.size())}] {
        const double g = t.grad(self).data[0];
        const Tensor& A2 = t.val(a);
        Tensor ga = A2;
        for (auto& v : ga.data) v *= 2.0 * g;
        t.accum(a, ga);
    });
}

// mean over the last axis of a rank-2 tensor: [C, L] -> [C]
inline Val mean_last(Tape& t, Val a) {
    const Tensor& A = t.val(a);
    if (A.rank() != 2) throw ConfigError("mean_last expects rank-2 input");
    const int C = A.dim(0), L = A.dim(1);
    Tensor out({C});
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int l = 0; l < L; ++l) acc += A.data[static_cast<size_t>(c) * L + l];
        out.data[static_cast<size_t>(c)] = acc / L;
    }
    return t.make(std::move(out), {a}, [&t, a, C, L, self = Val{static_cast<int>(t.size())}] {
        const Tensor& g = t.grad(self);
        Tensor ga({C, L});
        for (int c = 0; c < C; ++c)
            for (int l = 0; l < L; ++l)
                ga.data[static_cast<size_t>(c) * L + l] = g.data[static_cast<size_t>(c)] / L;
        t.accum(a, ga);
    });
}

// ---------------------------------------------------------------- linear

inline Val linear(Tape& t, Val x, Val w, Val b = {}) {
    const Tensor &X = t.val(x), &W = t.val(w);
    if (X.rank() != 1 || W.rank() != 2) throw ConfigError("linear expects vector and matrix");
    const int in = X.dim(0), out_dim = W.dim(0);
    if (W.dim(1) != in) throw LengthError("linear: weight/input mismatch");
    if (b.valid() && (t.val(b).rank() != 1 || t.val(b).dim(0) != out_dim))
        throw LengthError("linear: bias mismatch");

    Tensor out({out_dim});
    CMapR  Wm(W.data.data(), out_dim, in);
    Eigen::Map<const Eigen::VectorXd> Xv(X.data.data(), in);
    Eigen::Map<Eigen::VectorXd>       Ov(out.data.data(), out_dim);
    Ov.noalias() = Wm * Xv;
    if (b.valid())
        for (int i = 0; i < out_dim; ++i) out.data[static_cast<size_t>(i)] += t.val(b).data[static_cast<size_t>(i)];

    return t.make(std::move(out), {x, w, b.valid() ? b : x},
                  [&t, x, w, b, in, out_dim, self = Val{static_cast<int>(t.size())}] {
        const Tensor& g = t.grad(self);
        Eigen::Map<const Eigen::VectorXd> Gv(g.data.data(), out_dim);
        const Tensor &X2 = t.val(x), &W2 = t.val(w);
        CMapR Wm2(W2.data.data(), out_dim, in);
        Eigen::Map<const Eigen::VectorXd> Xv2(X2.data.data(), in);

        if (t.needs_grad(x)) {
            Tensor gx({in});
            Eigen::Map<Eigen::VectorXd>(gx.data.data(), in).noalias() = Wm2.transpose() * Gv;
            t.accum(x, gx);
        }
        if (t.needs_grad(w)) {
            Tensor gw({out_dim, in});
            MapR(gw.data.data(), out_dim, in).noalias() = Gv * Xv2.transpose();
            t.accum(w, gw);
        }
        if (b.valid()) t.accum(b, g);
    });
}

// ------------------------------------------------------------- convolutions

namespace detail {

inline int conv_out_dim(int in, int k, int stride, int pad) {
    const int num = in + 2 * pad - k;
    if (num < 0) throw LengthError("conv kernel larger than padded input");
    return num / stride + 1;
}

// gather input patches into [Cin*kh*kw, OH*OW]
inline Tensor im2col(const Tensor& x, int kh, int kw, int stride, int ph, int pw, int oh,
                     int ow) {
    const int cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor    col({cin * kh * kw, oh * ow});
    size_t    r = 0;
    for (int c = 0; c < cin; ++c)
        for (int u = 0; u < kh; ++u)
            for (int v = 0; v < kw; ++v, ++r) {
                double* dst = col.data.data() + r * static_cast<size_t>(oh) * ow;
                for (int i = 0; i < oh; ++i) {
                    const int hi = i * stride + u - ph;
                    for (int j = 0; j < ow; ++j) {
                        const int wj = j * stride + v - pw;
                        dst[static_cast<size_t>(i) * ow + j] =
                            (hi >= 0 && hi < H && wj >= 0 && wj < W) ? x.at3(c, hi, wj) : 0.0;
                    }
                }
            }
    return col;
}

inline void col2im_add(Tensor& gx, const Tensor& col, int kh, int kw, int stride, int ph,
                       int pw, int oh, int ow) {
    const int cin = gx.dim(0), H = gx.dim(1), W = gx.dim(2);
    size_t    r = 0;
    for (int c = 0; c < cin; ++c)
        for (int u = 0; u < kh; ++u)
            for (int v = 0; v < kw; ++v, ++r) {
                const double* src = col.data.data() + r * static_cast<size_t>(oh) * ow;
                for (int i = 0; i < oh; ++i) {
                    const int hi = i * stride + u - ph;
                    if (hi < 0 || hi >= H) continue;
                    for (int j = 0; j < ow; ++j) {
                        const int wj = j * stride + v - pw;
                        if (wj >= 0 && wj < W) gx.at3(c, hi, wj) += src[static_cast<size_t>(i) * ow + j];
                    }
                }
            }
}

}  // namespace detail

// x [Cin,H,W] * w [Cout,Cin,kh,kw] + b [Cout] -> [Cout,OH,OW].  The im2col
// buffer is recomputed in backward rather than kept alive on the tape.
inline Val conv2d(Tape& t, Val x, Val w, Val b, int stride, int ph, int pw) {
    const Tensor &X = t.val(x), &W = t.val(w);
    if (X.rank() != 3 || W.rank() != 4) throw ConfigError("conv2d expects rank-3 input, rank-4 kernel");
    if (W.dim(1) != X.dim(0)) throw LengthError("conv2d: channel mismatch");
    if (stride < 1) throw RangeError("conv2d: stride must be >= 1");
    const int cout = W.dim(0), cin = W.dim(1), kh = W.dim(2), kw = W.dim(3);
    const int oh = detail::conv_out_dim(X.dim(1), kh, stride, ph);
    const int ow = detail::conv_out_dim(X.dim(2), kw, stride, pw);
    if (b.valid() && (t.val(b).rank() != 1 || t.val(b).dim(0) != cout))
        throw LengthError("conv2d: bias mismatch");

    Tensor col = detail::im2col(X, kh, kw, stride, ph, pw, oh, ow);
    Tensor out({cout, oh, ow});
    {
        CMapR Wm(W.data.data(), cout, cin * kh * kw);
        CMapR Cm(col.data.data(), cin * kh * kw, oh * ow);
        MapR  Om(out.data.data(), cout, oh * ow);
        Om.noalias() = Wm * Cm;
    }
    if (b.valid()) {
        const Tensor& B = t.val(b);
        for (int c = 0; c < cout; ++c) {
            double* row = out.data.data() + static_cast<size_t>(c) * oh * ow;
            for (int i = 0; i < oh * ow; ++i) row[i] += B.data[static_cast<size_t>(c)];
        }
    }

    return t.make(std::move(out), {x, w, b.valid() ? b : x},
                  [&t, x, w, b, stride, ph, pw, oh, ow, kh, kw, cin, cout,
                   self = Val{static_cast<int>(t.size())}] {
        const Tensor& g  = t.grad(self);
        const Tensor& X2 = t.val(x);
        const Tensor& W2 = t.val(w);
        CMapR Gm(g.data.data(), cout, oh * ow);

        if (t.needs_grad(w)) {
            Tensor col = detail::im2col(X2, kh, kw, stride, ph, pw, oh, ow);
            CMapR  Cm(col.data.data(), cin * kh * kw, oh * ow);
            Tensor gw({cout, cin, kh, kw});
            MapR(gw.data.data(), cout, cin * kh * kw).noalias() = Gm * Cm.transpose();
            t.accum(w, gw);
        }
        if (t.needs_grad(x)) {
            Tensor gcol({cin * kh * kw, oh * ow});
            CMapR  Wm(W2.data.data(), cout, cin * kh * kw);
            MapR(gcol.data.data(), cin * kh * kw, oh * ow).noalias() = Wm.transpose() * Gm;
            Tensor gx(X2.shape);
            detail::col2im_add(gx, gcol, kh, kw, stride, ph, pw, oh, ow);
            t.accum(x, gx);
        }
        if (b.valid()) {
            Tensor gb({cout});
            for (int c = 0; c < cout; ++c) {
                const double* row = g.data.data() + static_cast<size_t>(c) * oh * ow;
                double        acc = 0.0;
                for (int i = 0; i < oh * ow; ++i) acc += row[i];
                gb.data[static_cast<size_t>(c)] = acc;
            }
            t.accum(b, gb);
        }
    });
}

// ------------------------------------------------------------ normalization

inline Val group_norm(Tape& t, Val x, Val gamma, Val beta, int groups, double eps = 1e-5) {
    const Tensor& X = t.val(x);
    if (X.rank() != 3) throw ConfigError("group_norm expects rank-3 input");
    const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
    if (groups < 1 || C % groups != 0) throw ConfigError("group count must divide channels");
    if (t.val(gamma).numel() != static_cast<size_t>(C) ||
        t.val(beta).numel() != static_cast<size_t>(C))
        throw LengthError("group_norm: scale/shift must have one entry per channel");

    const int    cpg = C / groups;
    const size_t gsz = static_cast<size_t>(cpg) * H * W;
    std::vector<double> mean(static_cast<size_t>(groups)), inv_std(static_cast<size_t>(groups));
    for (int g = 0; g < groups; ++g) {
        const double* p  = X.data.data() + static_cast<size_t>(g) * gsz;
        double        mu = 0.0;
        for (size_t i = 0; i < gsz; ++i) mu += p[i];
        mu /= static_cast<double>(gsz);
        double var = 0.0;
        for (size_t i = 0; i < gsz; ++i) var += (p[i] - mu) * (p[i] - mu);
        var /= static_cast<double>(gsz);
        mean[static_cast<size_t>(g)]    = mu;
        inv_std[static_cast<size_t>(g)] = 1.0 / std::sqrt(var + eps);
    }

    const Tensor &Ga = t.val(gamma), &Be = t.val(beta);
    Tensor out(X.shape);
    for (int c = 0; c < C; ++c) {
        const int    g  = c / cpg;
        const double mu = mean[static_cast<size_t>(g)], is = inv_std[static_cast<size_t>(g)];
        const double ga = Ga.data[static_cast<size_t>(c)], be = Be.data[static_cast<size_t>(c)];
        const double* src = X.data.data() + static_cast<size_t>(c) * H * W;
        double*       dst = out.data.data() + static_cast<size_t>(c) * H * W;
        for (int i = 0; i < H * W; ++i) dst[i] = ga * (src[i] - mu) * is + be;
    }

    return t.make(std::move(out), {x, gamma, beta},
                  [&t, x, gamma, beta, groups, cpg, C, H, W, gsz, mean, inv_std,
                   self = Val{static_cast<int>(t.size())}] {
        const Tensor& g   = t.grad(self);
        const Tensor& X2  = t.val(x);
        const Tensor& Ga2 = t.val(gamma);

        if (t.needs_grad(gamma) || t.needs_grad(beta)) {
            Tensor gga({C}), gbe({C});
            for (int c = 0; c < C; ++c) {
                const int     gi = c / cpg;
                const double  mu = mean[static_cast<size_t>(gi)];
                const double  is = inv_std[static_cast<size_t>(gi)];
                const double* xs = X2.data.data() + static_cast<size_t>(c) * H * W;
                const double* gs = g.data.data() + static_cast<size_t>(c) * H * W;
                double a = 0.0, b2 = 0.0;
                for (int i = 0; i < H * W; ++i) {
                    a += gs[i] * (xs[i] - mu) * is;
                    b2 += gs[i];
                }
                gga.data[static_cast<size_t>(c)] = a;
                gbe.data[static_cast<size_t>(c)] = b2;
            }
            t.accum(gamma, gga);
            t.accum(beta, gbe);
        }

        if (t.needs_grad(x)) {
            Tensor gx(X2.shape);
            for (int gi = 0; gi < groups; ++gi) {
                const double mu = mean[static_cast<size_t>(gi)];
                const double is = inv_std[static_cast<size_t>(gi)];
                // dxhat = g * gamma_c;  dx = is*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                for (int cc = 0; cc < cpg; ++cc) {
                    const int     c  = gi * cpg + cc;
                    const double  ga = Ga2.data[static_cast<size_t>(c)];
                    const double* xs = X2.data.data() + static_cast<size_t>(c) * H * W;
                    const double* gs = g.data.data() + static_cast<size_t>(c) * H * W;
                    for (int i = 0; i < H * W; ++i) {
                        const double xh  = (xs[i] - mu) * is;
                        const double dxh = gs[i] * ga;
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                    }
                }
                const double n = static_cast<double>(gsz);
                for (int cc = 0; cc < cpg; ++cc) {
                    const int     c  = gi * cpg + cc;
                    const double  ga = Ga2.data[static_cast<size_t>(c)];
                    const double* xs = X2.data.data() + static_cast<size_t>(c) * H * W;
                    const double* gs = g.data.data() + static_cast<size_t>(c) * H * W;
                    double*       gd = gx.data.data() + static_cast<size_t>(c) * H * W;
                    for (int i = 0; i < H * W; ++i) {
                        const double xh  = (xs[i] - mu) * is;
                        const double dxh = gs[i] * ga;
                        gd[i] = is * (dxh - sum_dxh / n - xh * sum_dxh_xh / n);
                    }
                }
            }
            t.accum(x, gx);
        }
    });
}

// --------------------------------------------------------- shape operations

inline Val nn_upsample2(Tape& t, Val x) {
    const Tensor& X = t.val(x);
    if (X.rank() != 3) throw ConfigError("nn_upsample2 expects rank-3 input");
    const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
    Tensor out({C, 2 * H, 2 * W});
    for (int c = 0; c < C; ++c)
        for (int h = 0; h < 2 * H; ++h)
            for (int w = 0; w < 2 * W; ++w) out.at3(c, h, w) = X.at3(c, h / 2, w / 2);
    return t.make(std::move(out), {x}, [&t, x, C, H, W, self = Val{static_cast<int>(t.size())}] {
        const Tensor& g = t.grad(self);
        Tensor gx({C, H, W});
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < 2 * H; ++h)
                for (int w = 0; w < 2 * W; ++w) gx.at3(c, h / 2, w / 2) += g.at3(c, h, w);
        t.accum(x, gx);
    });
}

inline Val concat_channels(Tape& t, Val a, Val b) {
    const Tensor &A = t.val(a), &B = t.val(b);
    if (A.rank() != 3 || B.rank() != 3 || A.dim(1) != B.dim(1) || A.dim(2) != B.dim(2))
        throw LengthError("concat_channels: spatial dims must match");
    const int Ca = A.dim(0), Cb = B.dim(0), H = A.dim(1), W = A.dim(2);
    Tensor out({Ca + Cb, H, W});
    std::copy(A.data.begin(), A.data.end(), out.data.begin());
    std::copy(B.data.begin(), B.data.end(), out.data.begin() + static_cast<ptrdiff_t>(A.numel()));
    return t.make(std::move(out), {a, b},
                  [&t, a, b, Ca, Cb, H, W, self = Val{static_cast<int>(t.size())}] {
        const Tensor& g = t.grad(self);
        const size_t  na = static_cast<size_t>(Ca) * H * W;
        Tensor ga({Ca, H, W}), gb({Cb, H, W});
        std::copy(g.data.begin(), g.data.begin() + static_cast<ptrdiff_t>(na), ga.data.begin());
        std::copy(g.data.begin() + static_cast<ptrdiff_t>(na), g.data.end(), gb.data.begin());
        t.accum(a, ga);
        t.accum(b, gb);
    });
}

inline Val concat_vec(Tape& t, const std::vector<Val>& parts) {
    if (parts.empty()) throw ConfigError("concat_vec: no inputs");
    int total = 0;
    for (Val p : parts) {
        if (t.val(p).rank() != 1) throw ConfigError("concat_vec expects rank-1 inputs");
        total += t.val(p).dim(0);
    }
    Tensor out({total});
    size_t off = 0;
    for (Val p : parts) {
        const Tensor& P = t.val(p);
        std::copy(P.data.begin(), P.data.end(), out.data.begin() + static_cast<ptrdiff_t>(off));
        off += P.numel();
    }
    return t.make(std::move(out), parts, [&t, parts, self = Val{static_cast<int>(t.size())}] {
        const Tensor& g   = t.grad(self);
        size_t        off = 0;
        for (Val p : parts) {
            const size_t n = t.val(p).numel();
            Tensor gp({static_cast<int>(n)});
            std::copy(g.data.begin() + static_cast<ptrdiff_t>(off),
                      g.data.begin() + static_cast<ptrdiff_t>(off + n), gp.data.begin());
            t.accum(p, gp);
            off += n;
        }
    });
}

// add a per-channel vector across all spatial positions: x[C,H,W] + v[C]
inline Val broadcast_add_chw(Tape& t, Val x, Val v) {
    const Tensor &X = t.val(x), &V = t.val(v);
    if (X.rank() != 3 || V.rank() != 1 || V.dim(0) != X.dim(0))
        throw LengthError("broadcast_add_chw: need one value per channel");
    const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
    Tensor out = X;
    for (int c = 0; c < C; ++c) {
        double* row = out.data.data() + static_cast<size_t>(c) * H * W;
        for (int i = 0; i < H * W; ++i) row[i] += V.data[static_cast<size_t>(c)];
    }
    return t.make(std::move(out), {x, v},
                  [&t, x, v, C, H, W, self = Val{static_cast<int>(t.size())}] {
        const Tensor& g = t.grad(self);
        t.accum(x, g);
        if (t.needs_grad(v)) {
            Tensor gv({C});
            for (int c = 0; c < C; ++c) {
                const double* row = g.data.data() + static_cast<size_t>(c) * H * W;
                double        acc = 0.0;
                for (int i = 0; i < H * W; ++i) acc += row[i];
                gv.data[static_cast<size_t>(c)] = acc;
            }
            t.accum(v, gv);
        }
    });
}

// zero-pad bottom/right to a target spatial size
inline Val pad_hw(Tape& t, Val x, int target_h, int target_w) {
    const Tensor& X = t.val(x);
    if (X.rank() != 3) throw ConfigError("pad_hw expects rank-3 input");
    const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
    if (target_h < H || target_w < W) throw LengthError("pad_hw: target smaller than input");
    Tensor out({C, target_h, target_w});
    for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) out.at3(c, h, w) = X.at3(c, h, w);
    return t.make(std::move(out), {x}, [&t, x, C, H, W, self = Val{static_cast<int>(t.size())}] {
        const Tensor& g = t.grad(self);
        Tensor gx({C, H, W});
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) gx.at3(c, h, w) = g.at3(c, h, w);
        t.accum(x, gx);
    });
}

// keep the top-left corner of the spatial grid
inline Val crop_hw(Tape& t, Val x, int keep_h, int keep_w) {
    const Tensor& X = t.val(x);
    if (X.rank() != 3) throw ConfigError("crop_hw expects rank-3 input");
    const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
    if (keep_h > H || keep_w > W || keep_h < 1 || keep_w < 1)
        throw LengthError("crop_hw: invalid region");
    Tensor out({C, keep_h, keep_w});
    for (int c = 0; c < C; ++c)
        for (int h = 0; h < keep_h; ++h)
            for (int w = 0; w < keep_w; ++w) out.at3(c, h, w) = X.at3(c, h, w);
    return t.make(std::move(out), {x},
                  [&t, x, C, H, W, keep_h, keep_w, self = Val{static_cast<int>(t.size())}] {
        const Tensor& g = t.grad(self);
        Tensor gx({C, H, W});
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < keep_h; ++h)
                for (int w = 0; w < keep_w; ++w) gx.at3(c, h, w) = g.at3(c, h, w);
        t.accum(x, gx);
    });
}

// ---------------------------------------------------------------- losses

inline Val softmax_cross_entropy(Tape& t, Val logits, int target) {
    const Tensor& L = t.val(logits);
    if (L.rank() != 1) throw ConfigError("softmax_cross_entropy expects a logit vector");
    const int n = L.dim(0);
    if (target < 0 || target >= n) throw RangeError("class target out of range");
    double m = L.data[0];
    for (double v : L.data) m = std::max(m, v);
    double z = 0.0;
    for (double v : L.data) z += std::exp(v - m);
    const double lse  = m + std::log(z);
    Tensor       out  = Tensor::from({1}, {lse - L.data[static_cast<size_t>(target)]});
    return t.make(std::move(out), {logits},
                  [&t, logits, target, n, m, z, self = Val{static_cast<int>(t.size())}] {
        const double  g = t.grad(self).data[0];
        const Tensor& L2 = t.val(logits);
        Tensor gl({n});
        for (int i = 0; i < n; ++i) {
            const double p = std::exp(L2.data[static_cast<size_t>(i)] - m) / z;
            gl.data[static_cast<size_t>(i)] = g * (p - (i == target ? 1.0 : 0.0));
        }
        t.accum(logits, gl);
    });
}

// mean over elements of (a-b)^2, b typically a constant target
inline Val mse(Tape& t, Val a, Val b) {
    Val d = sub(t, a, b);
    return mul_scalar(t, sum_squares(t, d), 1.0 / static_cast<double>(t.val(a).numel()));
}

}  // namespace dcse::ad
