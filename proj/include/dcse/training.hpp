#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "dcse/degrade.hpp"
#include "dcse/encoder.hpp"
#include "dcse/scorenet.hpp"
#include "dcse/sde.hpp"
#include "dcse/stft.hpp"

namespace dcse {

// ---------------------------------------------------------------------------
// objective
// ---------------------------------------------------------------------------

struct LossBreakdown {
    double score       = 0.0;
    double noise_ce    = 0.0;
    double reverb_mse  = 0.0;
    double distort_mse = 0.0;
    double total       = 0.0;
    double lambda      = 0.0;
};

inline LossBreakdown total_loss(double score, double noise_ce, double reverb_mse,
                                double distort_mse, double lambda) {
    auto check = [](double v, const char* name) {
        if (!std::isfinite(v) || v < 0.0)
            throw NumericError(std::string("loss component not finite/non-negative: ") + name);
    };
    check(score, "score");
    check(noise_ce, "noise_ce");
    check(reverb_mse, "reverb_mse");
    check(distort_mse, "distort_mse");
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw NumericError("loss component not finite/non-negative: lambda");
    LossBreakdown b;
    b.score       = score;
    b.noise_ce    = noise_ce;
    b.reverb_mse  = reverb_mse;
    b.distort_mse = distort_mse;
    b.lambda      = lambda;
    b.total       = score + lambda * (noise_ce + reverb_mse + distort_mse);
    return b;
}

struct TrainConfig {
    double        lambda        = 0.3;
    double        learning_rate = 1e-4;
    double        ema_decay     = 0.999;
    int           epochs        = 20;
    int           batch_size    = 8;
    uint64_t      seed          = 0;
    InjectionMode injection     = InjectionMode::LayerWise;
    double        cfg_p         = 0.1;
    bool          adaptive_weights = false;  // inference-time default; uniform in training

    void validate() const {
        if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
        if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay must be in [0, 1)");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (!(cfg_p >= 0.0 && cfg_p <= 1.0)) throw ConfigError("cfg_p must be in [0, 1]");
    }
};

// ---------------------------------------------------------------------------
// optimizer and weight averaging
// ---------------------------------------------------------------------------

inline void ema_update(Tensor& shadow, const Tensor& current, double decay) {
    if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("ema decay must be in [0, 1)");
    if (shadow.shape != current.shape) throw LengthError("ema: shape mismatch");
    for (size_t i = 0; i < shadow.numel(); ++i)
        shadow.data[i] = decay * shadow.data[i] + (1.0 - decay) * current.data[i];
}

class Ema {
public:
    Ema() = default;
    Ema(const std::vector<Param*>& ps, double decay) : decay_(decay) {
        if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("ema decay must be in [0, 1)");
        shadow_.reserve(ps.size());
        for (auto* p : ps) shadow_.push_back(p->value);
    }

    void update(const std::vector<Param*>& ps) {
        if (ps.size() != shadow_.size()) throw LengthError("ema: parameter count changed");
        for (size_t i = 0; i < ps.size(); ++i) ema_update(shadow_[i], ps[i]->value, decay_);
    }

    // materialize the averaged weights into the live parameters
    void copy_to(const std::vector<Param*>& ps) const {
        if (ps.size() != shadow_.size()) throw LengthError("ema: parameter count changed");
        for (size_t i = 0; i < ps.size(); ++i) {
            if (ps[i]->value.shape != shadow_[i].shape) throw LengthError("ema: shape mismatch");
            ps[i]->value = shadow_[i];
        }
    }

    double                     decay() const { return decay_; }
    std::vector<Tensor>&       shadow() { return shadow_; }
    const std::vector<Tensor>& shadow() const { return shadow_; }

private:
    double              decay_ = 0.999;
    std::vector<Tensor> shadow_;
};

class Adam {
public:
    Adam() = default;
    Adam(const std::vector<Param*>& ps, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        if (!(lr > 0.0)) throw ConfigError("adam: lr must be > 0");
        m_.reserve(ps.size());
        v_.reserve(ps.size());
        for (auto* p : ps) {
            m_.push_back(Tensor::zeros(p->value.shape));
            v_.push_back(Tensor::zeros(p->value.shape));
        }
    }

    void step(const std::vector<Param*>& ps) {
        if (ps.size() != m_.size()) throw LengthError("adam: parameter count changed");
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t i = 0; i < ps.size(); ++i) {
            auto& p = *ps[i];
            for (size_t j = 0; j < p.value.numel(); ++j) {
                const double g = p.grad.data[j];
                m_[i].data[j]  = beta1_ * m_[i].data[j] + (1.0 - beta1_) * g;
                v_[i].data[j]  = beta2_ * v_[i].data[j] + (1.0 - beta2_) * g * g;
                const double mh = m_[i].data[j] / bc1;
                const double vh = v_[i].data[j] / bc2;
                p.value.data[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
            }
        }
    }

    int64_t step_count() const { return t_; }
    double  lr() const { return lr_; }

private:
    double              lr_ = 1e-4, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    int64_t             t_ = 0;
    std::vector<Tensor> m_, v_;
};

// ---------------------------------------------------------------------------
// model bundle
// ---------------------------------------------------------------------------

struct Model {
    ScoreNetConfig     net_cfg;
    EncoderConfig      enc_cfg;
    StftConfig         stft_cfg;
    SdeConfig          sde_cfg;
    ScoreNet           net;
    DegradationEncoder encoder;

    Model(const ScoreNetConfig& nc, const EncoderConfig& ec, const StftConfig& sc,
          const SdeConfig& dc, uint64_t init_seed)
        : net_cfg(nc), enc_cfg(ec), stft_cfg(sc), sde_cfg(dc),
          net([&] {
              Rng r(derive_seed(init_seed, 1));
              return ScoreNet(nc, r);
          }()),
          encoder([&] {
              Rng r(derive_seed(init_seed, 2));
              return DegradationEncoder(ec, r);
          }()) {
        if (ec.d_out != nc.embed_dim)
            throw ConfigError("encoder output width must match score net embedding width");
    }

    Model(const Model&)            = delete;
    Model& operator=(const Model&) = delete;

    bool uses_encoder() const {
        return net_cfg.injection == InjectionMode::LayerWise ||
               net_cfg.injection == InjectionMode::InputAddition;
    }

    // score-net parameters first, then encoder parameters; fixed order is the
    // checkpoint and optimizer-state contract
    std::vector<Param*> params() {
        std::vector<Param*> out;
        net.collect(out);
        encoder.collect(out);
        return out;
    }
};

// ---------------------------------------------------------------------------
// batches
// ---------------------------------------------------------------------------

struct TrainItem {
    std::string      id;
    Grid             x0, y;  // compressed spectra, frame-major
    int              frames = 0, bins = 0;
    Tensor           mel;  // degraded-input features for the encoder
    DegradationLabel label;
};

inline TrainItem make_train_item(const std::string& id, const Waveform& clean,
                                 const Waveform& degraded, const DegradationLabel& label,
                                 const StftConfig& scfg, const EncoderConfig& ecfg) {
    if (clean.size() != degraded.size())
        throw LengthError("train item: clean/degraded length mismatch");
    label.validate();
    TrainItem it;
    it.id           = id;
    auto clean_spec = stft(clean, scfg);
    auto deg_spec   = stft(degraded, scfg);
    it.frames       = clean_spec.frames;
    it.bins         = clean_spec.bins;
    it.x0           = std::move(clean_spec.data);
    it.y            = std::move(deg_spec.data);
    it.mel          = log_mel_features(degraded, ecfg);
    it.label        = label;
    return it;
}

// ---------------------------------------------------------------------------
// one optimization step
// ---------------------------------------------------------------------------

namespace detail {

// mean |sigma * s + z|^2 over complex elements, on the tape
inline ad::Val dsm_loss_on_tape(ad::Tape& t, ad::Val score_out, const Grid& z, double sigma,
                                int frames, int bins) {
    ad::Val zt  = t.input(grid_to_tensor(z, frames, bins));
    ad::Val res = ad::add(t, ad::mul_scalar(t, score_out, sigma), zt);
    return ad::mul_scalar(t, ad::sum_squares(t, res),
                          1.0 / (static_cast<double>(frames) * static_cast<double>(bins)));
}

}  // namespace detail

// Forward/backward over one batch with gradient accumulation, then a single
// Adam and EMA update. Loss components are batch means.
inline LossBreakdown train_step(Model& model, const std::vector<const TrainItem*>& batch,
                                const TrainConfig& cfg, Adam& opt, Ema& ema, Rng& rng) {
    cfg.validate();
    if (batch.empty()) throw LengthError("train_step: empty batch");
    if (model.net_cfg.injection != cfg.injection)
        throw ConfigError("train config and model disagree on injection mode");

    auto params = model.params();
    for (auto* p : params) p->zero_grad();

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double       sum_score = 0.0, sum_ce = 0.0, sum_rmse = 0.0, sum_dmse = 0.0;

    for (const TrainItem* item : batch) {
        const double tlevel = rng.uniform(model.sde_cfg.t_eps, 1.0);
        auto         pert   = sde::perturb(model.sde_cfg, item->x0, item->y, tlevel, rng);

        ad::Tape t(true);
        ad::Val  loss{};
        double   score_item = 0.0, ce_item = 0.0, rmse_item = 0.0, dmse_item = 0.0;

        ad::Val x_in = t.input(stack_observation(pert.xt, item->y, item->frames, item->bins));

        if (model.uses_encoder()) {
            const auto mask = draw_branch_mask(cfg.cfg_p, rng);
            auto       enc  = model.encoder.forward_from_mel(t, item->mel, mask);

            ad::Val s = model.net.forward(t, x_in, tlevel, enc.c_extra);
            ad::Val score_loss =
                detail::dsm_loss_on_tape(t, s, pert.z, pert.sigma, item->frames, item->bins);

            ad::Val ce = ad::softmax_cross_entropy(t, enc.noise_logits, item->label.noise_class);
            ad::Val rt = t.input(Tensor::from({1}, {t60_target(item->label)}));
            ad::Val dt = t.input(Tensor::from({1}, {distortion_target(item->label)}));
            ad::Val rm = ad::mse(t, enc.t60_pred, rt);
            ad::Val dm = ad::mse(t, enc.distort_pred, dt);

            score_item = t.val(score_loss).data[0];
            ce_item    = t.val(ce).data[0];
            rmse_item  = t.val(rm).data[0];
            dmse_item  = t.val(dm).data[0];

            ad::Val aux = ad::add(t, ce, ad::add(t, rm, dm));
            loss        = ad::add(t, score_loss, ad::mul_scalar(t, aux, cfg.lambda));
        } else {
            ad::Val s = model.net.forward(t, x_in, tlevel);
            loss = detail::dsm_loss_on_tape(t, s, pert.z, pert.sigma, item->frames, item->bins);
            score_item = t.val(loss).data[0];
        }

        if (!std::isfinite(t.val(loss).data[0]))
            throw NumericError("train_step: non-finite loss on item " + item->id);

        t.backward(ad::mul_scalar(t, loss, inv_b));

        sum_score += score_item;
        sum_ce += ce_item;
        sum_rmse += rmse_item;
        sum_dmse += dmse_item;
    }

    for (auto* p : params)
        for (double g : p->grad.data)
            if (!std::isfinite(g))
                throw NumericError("train_step: non-finite gradient in " + p->name +
                                   " (score=" + std::to_string(sum_score * inv_b) +
                                   ", ce=" + std::to_string(sum_ce * inv_b) + ")");

    opt.step(params);
    ema.update(params);

    return total_loss(sum_score * inv_b, sum_ce * inv_b, sum_rmse * inv_b, sum_dmse * inv_b,
                      cfg.lambda);
}

// ---------------------------------------------------------------------------
// epoch loop
// ---------------------------------------------------------------------------

inline void log_step_jsonl(std::ostream& os, int step, int epoch, const LossBreakdown& b,
                           double lr) {
    os << "{\"step\":" << step << ",\"epoch\":" << epoch << ",\"score\":" << b.score
       << ",\"noise_ce\":" << b.noise_ce << ",\"reverb_mse\":" << b.reverb_mse
       << ",\"distort_mse\":" << b.distort_mse << ",\"total\":" << b.total << ",\"lr\":" << lr
       << "}\n";
}

struct TrainResult {
    std::vector<LossBreakdown> history;
    int                        steps = 0;
};

// Deterministic epoch loop: a seeded shuffle per epoch, fixed batch order.
// Optimizer state, EMA, and the data/dropout RNG live across epochs.
inline TrainResult train_loop(Model& model, const std::vector<TrainItem>& items,
                              const TrainConfig& cfg, Adam& opt, Ema& ema, Rng& rng,
                              std::ostream* jsonl = nullptr) {
    cfg.validate();
    if (items.empty()) throw LengthError("train_loop: no items");

    TrainResult res;
    int         step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order(items.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_index(i)]);

        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            std::vector<const TrainItem*> batch;
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            for (size_t i = start; i < stop; ++i) batch.push_back(&items[order[i]]);
            auto b = train_step(model, batch, cfg, opt, ema, rng);
            ++step;
            if (jsonl) log_step_jsonl(*jsonl, step, epoch, b, opt.lr());
            res.history.push_back(b);
        }
    }
    res.steps = step;
    return res;
}

}  // namespace dcse
