#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include "dcse/common.hpp"
#include "dcse/rng.hpp"

namespace dcse {

// Mean-reverting forward process in the compressed spectrogram domain:
//   dx_t = gamma (y - x_t) dt + g(t) dw_t,
//   g(t) = sigma_min (sigma_max/sigma_min)^t sqrt(2 ln(sigma_max/sigma_min)),
// which pulls clean speech x_0 toward the degraded observation y while
// injecting noise that grows geometrically with t.
struct SdeConfig {
    double gamma     = 1.5;
    double sigma_min = 0.05;
    double sigma_max = 0.5;
    double t_eps     = 0.03;  // reverse integration stops here, not at 0
    int    n_steps   = 30;

    void validate() const {
        if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
        if (!(sigma_min > 0.0)) throw ConfigError("sigma_min must be positive");
        if (!(sigma_max > sigma_min)) throw ConfigError("sigma_max must exceed sigma_min");
        if (!(t_eps > 0.0 && t_eps < 1.0)) throw ConfigError("t_eps must be in (0, 1)");
        if (n_steps < 1) throw ConfigError("n_steps must be >= 1");
    }
};

using Grid    = std::vector<std::complex<double>>;
using ScoreFn = std::function<Grid(const Grid&, double)>;

namespace sde {

inline void check_t(double t, double lo = 0.0, double hi = 1.0) {
    if (!(t >= lo && t <= hi)) throw RangeError("diffusion time out of range");
}

inline double log_sigma_ratio(const SdeConfig& c) { return std::log(c.sigma_max / c.sigma_min); }

inline double diffusion_coeff(const SdeConfig& c, double t) {
    check_t(t);
    const double k = log_sigma_ratio(c);
    return c.sigma_min * std::pow(c.sigma_max / c.sigma_min, t) * std::sqrt(2.0 * k);
}

inline double mean_decay(const SdeConfig& c, double t) {
    check_t(t);
    return std::exp(-c.gamma * t);
}

// E[x_t | x_0, y] = e^{-gamma t} x_0 + (1 - e^{-gamma t}) y
inline Grid marginal_mean(const SdeConfig& c, const Grid& x0, const Grid& y, double t) {
    if (x0.size() != y.size()) throw LengthError("marginal_mean: grid size mismatch");
    const double a = mean_decay(c, t);
    Grid out(x0.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + (1.0 - a) * y[i];
    return out;
}

// Var[x_t] = sigma_min^2 (k / (gamma + k)) (e^{2 k t} - e^{-2 gamma t}),
// k = ln(sigma_max / sigma_min); per-element complex variance E|x - mu|^2.
inline double marginal_variance(const SdeConfig& c, double t) {
    check_t(t);
    const double k = log_sigma_ratio(c);
    return c.sigma_min * c.sigma_min * (k / (c.gamma + k)) *
           (std::exp(2.0 * k * t) - std::exp(-2.0 * c.gamma * t));
}

inline double marginal_sigma(const SdeConfig& c, double t) {
    return std::sqrt(marginal_variance(c, t));
}

struct Perturbed {
    Grid   xt;
    Grid   z;      // the unit complex noise that was injected
    double sigma;  // its scale
};

inline Perturbed perturb(const SdeConfig& c, const Grid& x0, const Grid& y, double t,
                         Rng& rng) {
    check_t(t, 0.0, 1.0);
    const double sigma = marginal_sigma(c, t);
    if (!(sigma > 0.0)) throw RangeError("perturb requires t > 0");
    Grid mu = marginal_mean(c, x0, y, t);
    Perturbed p;
    p.sigma = sigma;
    p.z.resize(mu.size());
    p.xt.resize(mu.size());
    for (size_t i = 0; i < mu.size(); ++i) {
        p.z[i]  = rng.complex_normal();
        p.xt[i] = mu[i] + sigma * p.z[i];
    }
    return p;
}

// grad_x log p(x_t | x_0, y) = -(x_t - mu(t)) / sigma(t)^2
inline Grid conditional_score(const SdeConfig& c, const Grid& xt, const Grid& x0,
                              const Grid& y, double t) {
    const double var = marginal_variance(c, t);
    if (!(var > 0.0)) throw RangeError("conditional score requires t > 0");
    Grid mu = marginal_mean(c, x0, y, t);
    Grid s(xt.size());
    if (xt.size() != mu.size()) throw LengthError("conditional_score: grid size mismatch");
    for (size_t i = 0; i < s.size(); ++i) s[i] = -(xt[i] - mu[i]) / var;
    return s;
}

// Monte-Carlo estimate target: a perfect score model s minimizes
// E | sigma s + z |^2; mean is over complex elements.
inline double dsm_residual(const Grid& score, const Grid& z, double sigma) {
    if (score.size() != z.size()) throw LengthError("dsm_residual: size mismatch");
    if (score.empty()) throw LengthError("dsm_residual: empty grid");
    double acc = 0.0;
    for (size_t i = 0; i < score.size(); ++i) acc += std::norm(sigma * score[i] + z[i]);
    return acc / static_cast<double>(score.size());
}

// x_1 ~ N(y, sigma(1)^2): the reverse process starts from the degraded
// observation plus full-scale process noise.
inline Grid sample_prior(const SdeConfig& c, const Grid& y, Rng& rng) {
    const double s1 = marginal_sigma(c, 1.0);
    Grid x(y.size());
    for (size_t i = 0; i < y.size(); ++i) x[i] = y[i] + s1 * rng.complex_normal();
    return x;
}

namespace detail {

inline double grid_norm(const Grid& g) {
    double acc = 0.0;
    for (const auto& v : g) acc += std::norm(v);
    return std::sqrt(acc);
}

}  // namespace detail

// Reverse-time predictor-corrector sampler.  n_steps uniform steps from t = 1
// down to t_eps; at each level the corrector runs annealed Langevin updates
// with step size eps = 2 (r |z| / |s|)^2, then the predictor takes one reverse
// Euler-Maruyama step  x <- x - [gamma (y - x) - g^2 s] dt + g sqrt(dt) z.
inline Grid pc_sample(const SdeConfig& c, const Grid& y, const ScoreFn& score, Rng& rng,
                      int n_corrector = 1, double snr_r = 0.5) {
    c.validate();
    if (n_corrector < 0) throw ConfigError("corrector step count must be >= 0");
    if (!(snr_r > 0.0)) throw ConfigError("corrector snr ratio must be positive");
    if (y.empty()) throw LengthError("pc_sample: empty observation");

    const double dt = (1.0 - c.t_eps) / static_cast<double>(c.n_steps);
    Grid         x  = sample_prior(c, y, rng);
    Grid         z(x.size());

    for (int k = 0; k < c.n_steps; ++k) {
        const double t = 1.0 - k * dt;

        for (int j = 0; j < n_corrector; ++j) {
            Grid s = score(x, t);
            if (s.size() != x.size()) throw LengthError("score output size mismatch");
            for (auto& v : z) v = rng.complex_normal();
            const double ns = detail::grid_norm(s);
            if (!(ns > 0.0)) continue;
            const double ratio = snr_r * detail::grid_norm(z) / ns;
            const double eps   = 2.0 * ratio * ratio;
            for (size_t i = 0; i < x.size(); ++i)
                x[i] += eps * s[i] + std::sqrt(2.0 * eps) * z[i];
        }

        Grid s = score(x, t);
        if (s.size() != x.size()) throw LengthError("score output size mismatch");
        const double g = diffusion_coeff(c, t);
        for (auto& v : z) v = rng.complex_normal();
        for (size_t i = 0; i < x.size(); ++i) {
            const std::complex<double> drift = c.gamma * (y[i] - x[i]) - g * g * s[i];
            x[i] += -drift * dt + g * std::sqrt(dt) * z[i];
        }
        if (!std::all_of(x.begin(), x.end(),
                         [](const std::complex<double>& v) {
                             return std::isfinite(v.real()) && std::isfinite(v.imag());
                         }))
            throw NumericError("sampler diverged");
    }
    return x;
}

// Deterministic probability-flow sampler: integrate
//   dx/dt = gamma (y - x) - (1/2) g(t)^2 s(x, t)
// from t = 1 to t_eps with fixed-step classical Runge-Kutta, starting from a
// prior draw (the only stochastic input).
inline Grid ode_sample(const SdeConfig& c, const Grid& y, const ScoreFn& score, Rng& rng) {
    c.validate();
    if (y.empty()) throw LengthError("ode_sample: empty observation");

    auto f = [&](const Grid& x, double t) {
        Grid s = score(x, t);
        if (s.size() != x.size()) throw LengthError("score output size mismatch");
        const double g2 = diffusion_coeff(c, t);
        Grid out(x.size());
        for (size_t i = 0; i < x.size(); ++i)
            out[i] = c.gamma * (y[i] - x[i]) - 0.5 * g2 * g2 * s[i];
        return out;
    };

    const double h = (1.0 - c.t_eps) / static_cast<double>(c.n_steps);
    Grid         x = sample_prior(c, y, rng);
    for (int k = 0; k < c.n_steps; ++k) {
        const double t  = 1.0 - k * h;
        Grid k1 = f(x, t);
        Grid xa(x.size());
        for (size_t i = 0; i < x.size(); ++i) xa[i] = x[i] - 0.5 * h * k1[i];
        Grid k2 = f(xa, t - 0.5 * h);
        for (size_t i = 0; i < x.size(); ++i) xa[i] = x[i] - 0.5 * h * k2[i];
        Grid k3 = f(xa, t - 0.5 * h);
        for (size_t i = 0; i < x.size(); ++i) xa[i] = x[i] - h * k3[i];
        Grid k4 = f(xa, t - h);
        for (size_t i = 0; i < x.size(); ++i)
            x[i] -= h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    return x;
}

}  // namespace sde
}  // namespace dcse
