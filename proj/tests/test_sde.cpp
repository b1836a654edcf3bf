#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "dcse/rng.hpp"
#include "dcse/sde.hpp"

using namespace dcse;
using Catch::Approx;

namespace {

Grid random_grid(size_t n, uint64_t seed, double scale = 1.0) {
    Rng  rng(seed);
    Grid g(n);
    for (auto& v : g) v = scale * rng.complex_normal();
    return g;
}

// independently integrate the variance law d(var)/dt = -2 gamma var + g(t)^2
double variance_by_ode(const SdeConfig& c, double t_end, int steps = 20000) {
    const double h = t_end / steps;
    double       v = 0.0;
    auto f = [&](double t, double var) {
        const double g = sde::diffusion_coeff(c, t);
        return -2.0 * c.gamma * var + g * g;
    };
    double t = 0.0;
    for (int i = 0; i < steps; ++i) {
        const double k1 = f(t, v);
        const double k2 = f(t + 0.5 * h, v + 0.5 * h * k1);
        const double k3 = f(t + 0.5 * h, v + 0.5 * h * k2);
        const double k4 = f(t + h, v + h * k3);
        v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += h;
    }
    return v;
}

}  // namespace

TEST_CASE("diffusion coefficient matches the externally derived value", "[sde]") {
    SdeConfig c;
    REQUIRE(sde::diffusion_coeff(c, 0.5) == Approx(0.339307021221).margin(1e-9));
    REQUIRE(sde::diffusion_coeff(c, 0.0) ==
            Approx(0.05 * std::sqrt(2.0 * std::log(10.0))).margin(1e-12));
    REQUIRE(sde::diffusion_coeff(c, 1.0) ==
            Approx(0.5 * std::sqrt(2.0 * std::log(10.0))).margin(1e-12));
    REQUIRE(sde::mean_decay(c, 0.5) == Approx(0.472366552741).margin(1e-9));
    REQUIRE_THROWS_AS(sde::diffusion_coeff(c, -0.1), RangeError);
    REQUIRE_THROWS_AS(sde::diffusion_coeff(c, 1.1), RangeError);
}

TEST_CASE("closed-form variance agrees with integrating the variance law", "[sde]") {
    SdeConfig c;
    for (double t : {0.03, 0.1, 0.3, 0.5, 0.8, 1.0}) {
        const double closed = sde::marginal_variance(c, t);
        const double ode    = variance_by_ode(c, t);
        CAPTURE(t, closed, ode);
        REQUIRE(closed == Approx(ode).epsilon(1e-8));
    }
    REQUIRE(sde::marginal_sigma(c, 0.5) == Approx(0.121657333898).margin(1e-9));
    REQUIRE(sde::marginal_sigma(c, 1.0) == Approx(0.388982658207).margin(1e-9));
    REQUIRE(sde::marginal_sigma(c, 0.03) == Approx(0.018830099938).margin(1e-9));
    REQUIRE(sde::marginal_variance(c, 0.0) == 0.0);

    // variance grows monotonically on [0, 1]
    double prev = 0.0;
    for (double t = 0.05; t <= 1.0; t += 0.05) {
        const double v = sde::marginal_variance(c, t);
        REQUIRE(v > prev);
        prev = v;
    }

    // alternative parameters exercise the gamma dependence
    SdeConfig c2;
    c2.gamma = 0.4;
    c2.sigma_min = 0.1;
    c2.sigma_max = 0.9;
    for (double t : {0.2, 0.7})
        REQUIRE(sde::marginal_variance(c2, t) == Approx(variance_by_ode(c2, t)).epsilon(1e-8));
}

TEST_CASE("kernel moments match a brute-force forward simulation", "[sde][slow]") {
    SdeConfig c;
    const double t_end = 0.4, dt = 1e-3;
    const int    n_paths = 20000, n_steps = static_cast<int>(t_end / dt);
    const std::complex<double> x0{0.8, -0.3}, y{-0.2, 0.5};

    Rng    rng(12345);
    double mr = 0.0, mi = 0.0, m2 = 0.0;
    for (int p = 0; p < n_paths; ++p) {
        std::complex<double> x = x0;
        for (int s = 0; s < n_steps; ++s) {
            const double t = s * dt;
            const double g = sde::diffusion_coeff(c, t);
            x += c.gamma * (y - x) * dt + g * std::sqrt(dt) * rng.complex_normal();
        }
        mr += x.real();
        mi += x.imag();
        m2 += std::norm(x);
    }
    mr /= n_paths;
    mi /= n_paths;
    m2 /= n_paths;

    Grid x0g{x0}, yg{y};
    const auto   mean  = sde::marginal_mean(c, x0g, yg, t_end)[0];
    const double sigma = sde::marginal_sigma(c, t_end);
    const double emp_var = m2 - (mr * mr + mi * mi);
    CAPTURE(mr, mi, mean.real(), mean.imag(), std::sqrt(emp_var), sigma);
    REQUIRE(mr == Approx(mean.real()).margin(0.01 * std::abs(mean)));
    REQUIRE(mi == Approx(mean.imag()).margin(0.01 * std::abs(mean)));
    REQUIRE(std::sqrt(emp_var) == Approx(sigma).epsilon(0.03));
}

TEST_CASE("perturb reproduces mean plus scaled unit noise", "[sde]") {
    SdeConfig c;
    Rng  rng(7);
    auto x0 = random_grid(64, 1), y = random_grid(64, 2);
    auto p  = sde::perturb(c, x0, y, 0.6, rng);
    REQUIRE(p.sigma == Approx(sde::marginal_sigma(c, 0.6)));
    auto mu = sde::marginal_mean(c, x0, y, 0.6);
    for (size_t i = 0; i < x0.size(); ++i)
        REQUIRE(std::abs(p.xt[i] - (mu[i] + p.sigma * p.z[i])) < 1e-14);

    // injected unit noise has the E|z|^2 = 1 convention
    Rng    rng2(8);
    double acc = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) acc += std::norm(rng2.complex_normal());
    REQUIRE(acc / n == Approx(1.0).epsilon(0.01));

    REQUIRE_THROWS_AS(sde::perturb(c, x0, y, 0.0, rng), RangeError);
}

TEST_CASE("conditional score is exactly minus noise over sigma", "[sde]") {
    SdeConfig c;
    Rng  rng(11);
    auto x0 = random_grid(32, 3), y = random_grid(32, 4);
    for (double t : {0.05, 0.5, 1.0}) {
        auto p = sde::perturb(c, x0, y, t, rng);
        auto s = sde::conditional_score(c, p.xt, x0, y, t);
        for (size_t i = 0; i < s.size(); ++i)
            REQUIRE(std::abs(s[i] - (-p.z[i] / p.sigma)) < 1e-9);
        // and it zeroes the denoising residual up to numerical precision
        REQUIRE(sde::dsm_residual(s, p.z, p.sigma) < 1e-18);
    }
}

TEST_CASE("dsm residual is minimized by the true score", "[sde]") {
    SdeConfig c;
    Rng  rng(13);
    auto x0 = random_grid(48, 5), y = random_grid(48, 6);
    auto p  = sde::perturb(c, x0, y, 0.5, rng);
    auto s  = sde::conditional_score(c, p.xt, x0, y, 0.5);
    const double at_truth = sde::dsm_residual(s, p.z, p.sigma);
    for (double scale : {0.5, 0.9, 1.1, 2.0}) {
        Grid off = s;
        for (auto& v : off) v *= scale;
        REQUIRE(sde::dsm_residual(off, p.z, p.sigma) > at_truth);
    }
}

TEST_CASE("probability-flow sampler follows the analytic affine solution", "[sde]") {
    SdeConfig c;
    auto x0 = random_grid(24, 21), y = random_grid(24, 22);
    // the conditional score makes the flow linear with solution
    // x(t) = mu(t) + (sigma(t)/sigma(1)) (x_1 - mu(1))
    ScoreFn oracle = [&](const Grid& x, double t) {
        return sde::conditional_score(c, x, x0, y, t);
    };
    Rng  rng(555);
    Rng  rng_replay(555);
    auto got = sde::ode_sample(c, y, oracle, rng);

    Grid x1 = sde::sample_prior(c, y, rng_replay);  // same draw the sampler saw
    auto mu1  = sde::marginal_mean(c, x0, y, 1.0);
    auto mue  = sde::marginal_mean(c, x0, y, c.t_eps);
    const double rho = sde::marginal_sigma(c, c.t_eps) / sde::marginal_sigma(c, 1.0);
    double worst = 0.0, scale = 0.0;
    for (size_t i = 0; i < got.size(); ++i) {
        const auto expect = mue[i] + rho * (x1[i] - mu1[i]);
        worst = std::max(worst, std::abs(got[i] - expect));
        scale = std::max(scale, std::abs(expect));
    }
    CAPTURE(worst, scale);
    REQUIRE(worst < 1e-4 * std::max(1.0, scale));
}

TEST_CASE("pc sampler concentrates near the conditional mean", "[sde][slow]") {
    SdeConfig c;
    auto x0 = random_grid(8, 31), y = random_grid(8, 32);
    ScoreFn oracle = [&](const Grid& x, double t) {
        return sde::conditional_score(c, x, x0, y, t);
    };

    Rng rng(99);
    const int trials = 400;
    Grid      mean_out(x0.size(), {0.0, 0.0});
    double    sq = 0.0;
    for (int tr = 0; tr < trials; ++tr) {
        auto out = sde::pc_sample(c, y, oracle, rng, 1, 0.5);
        for (size_t i = 0; i < out.size(); ++i) mean_out[i] += out[i];
        for (size_t i = 0; i < out.size(); ++i) sq += std::norm(out[i]);
    }
    for (auto& v : mean_out) v /= static_cast<double>(trials);

    auto   mue  = sde::marginal_mean(c, x0, y, c.t_eps);
    double err = 0.0, ref = 0.0, spread = 0.0;
    for (size_t i = 0; i < mue.size(); ++i) {
        err += std::norm(mean_out[i] - mue[i]);
        ref += std::norm(mue[i]);
        spread += std::norm(mean_out[i]);
    }
    // empirical per-element std of the output around its mean
    const double var_out =
        sq / (trials * static_cast<double>(x0.size())) - spread / static_cast<double>(x0.size());
    const double sig_eps = sde::marginal_sigma(c, c.t_eps);
    CAPTURE(std::sqrt(err / ref), std::sqrt(var_out), sig_eps);
    REQUIRE(std::sqrt(err / ref) < 0.05);
    // coarse Euler-Maruyama inflates the terminal spread; it must stay the
    // right order of magnitude but cannot match sigma(t_eps) exactly
    REQUIRE(std::sqrt(var_out) > 0.6 * sig_eps);
    REQUIRE(std::sqrt(var_out) < 2.5 * sig_eps);
}

TEST_CASE("single predictor step matches the update formula exactly", "[sde]") {
    SdeConfig c;
    c.n_steps = 1;  // one step of size 1 - t_eps, score evaluated at t = 1
    auto y = random_grid(5, 71);
    Grid s0(5);
    for (size_t i = 0; i < s0.size(); ++i)
        s0[i] = {0.3 * static_cast<double>(i) - 0.5, 0.2};
    ScoreFn constant_score = [&](const Grid&, double) { return s0; };

    Rng  rng(2024);
    auto got = sde::pc_sample(c, y, constant_score, rng, 0);

    Rng  replay(2024);
    Grid x1 = sde::sample_prior(c, y, replay);
    const double dt = 1.0 - c.t_eps;
    const double g  = sde::diffusion_coeff(c, 1.0);
    for (size_t i = 0; i < y.size(); ++i) {
        const std::complex<double> drift = c.gamma * (y[i] - x1[i]) - g * g * s0[i];
        const std::complex<double> expect =
            x1[i] - drift * dt + g * std::sqrt(dt) * replay.complex_normal();
        REQUIRE(std::abs(got[i] - expect) < 1e-14);
    }
}

TEST_CASE("samplers are seed-deterministic and validate inputs", "[sde]") {
    SdeConfig c;
    c.n_steps = 10;
    auto x0 = random_grid(6, 41), y = random_grid(6, 42);
    ScoreFn oracle = [&](const Grid& x, double t) {
        return sde::conditional_score(c, x, x0, y, t);
    };
    Rng r1(5), r2(5), r3(6);
    auto a = sde::pc_sample(c, y, oracle, r1);
    auto b = sde::pc_sample(c, y, oracle, r2);
    auto d = sde::pc_sample(c, y, oracle, r3);
    REQUIRE(a == b);
    REQUIRE(a != d);

    Rng r4(5);
    REQUIRE_THROWS_AS(sde::pc_sample(c, Grid{}, oracle, r4), LengthError);
    REQUIRE_THROWS_AS(sde::pc_sample(c, y, oracle, r4, -1), ConfigError);
    REQUIRE_THROWS_AS(sde::pc_sample(c, y, oracle, r4, 1, 0.0), ConfigError);

    ScoreFn bad = [&](const Grid& x, double) { return Grid(x.size() + 1); };
    REQUIRE_THROWS_AS(sde::pc_sample(c, y, bad, r4), LengthError);

    SdeConfig broken;
    broken.sigma_max = broken.sigma_min;
    REQUIRE_THROWS_AS(broken.validate(), ConfigError);
    broken = SdeConfig{};
    broken.gamma = 0.0;
    REQUIRE_THROWS_AS(broken.validate(), ConfigError);
    broken = SdeConfig{};
    broken.t_eps = 0.0;
    REQUIRE_THROWS_AS(broken.validate(), ConfigError);
    broken = SdeConfig{};
    broken.n_steps = 0;
    REQUIRE_THROWS_AS(broken.validate(), ConfigError);
}
