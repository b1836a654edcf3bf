#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "dcse/metrics.hpp"
#include "dcse/noise.hpp"
#include "dcse/rng.hpp"

using namespace dcse;

namespace {

Waveform speechish(double seconds, uint64_t seed) {
    Rng      rng(seed);
    Waveform w;
    w.sample_rate = 16000;
    const size_t n = static_cast<size_t>(seconds * 16000.0);
    w.samples.resize(n);
    const double f0 = rng.uniform(95.0, 240.0);
    for (size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / 16000.0;
        const double pitch = f0 * (1.0 + 0.15 * std::sin(2.0 * kPi * 1.3 * t));
        double       v = 0.0;
        for (int h = 1; h <= 6; ++h) v += std::sin(2.0 * kPi * pitch * h * t) / h;
        v *= 0.55 + 0.45 * std::sin(2.0 * kPi * 3.1 * t + 0.7);
        w.samples[i] = 0.22 * v + 0.004 * rng.normal();
    }
    return w;
}

// ---------------------------------------------------------------------------
// straightforward re-derivation of the intelligibility score, written
// independently of the library implementation (shared code: only the FFT)
// ---------------------------------------------------------------------------
double estoi_oracle(const Waveform& ref, const Waveform& est) {
    const int fs = 16000, flen = 410, hop = 205, nfft = 1024, J = 15, N = 30;

    std::vector<double> w(flen);
    for (int i = 0; i < flen; ++i) w[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / flen));

    // silent-frame removal keyed on the reference
    auto x = ref.samples;
    auto y = est.samples;
    {
        const int nf = (static_cast<int>(x.size()) - flen) / hop + 1;
        std::vector<double> edb(nf);
        double              mx = -1e300;
        for (int f = 0; f < nf; ++f) {
            double e = 0.0;
            for (int i = 0; i < flen; ++i) {
                const double v = x[f * hop + i] * w[i];
                e += v * v;
            }
            edb[f] = 10.0 * std::log10(e + 1e-300);
            mx     = std::max(mx, edb[f]);
        }
        std::vector<double> xs, ys;
        int                 kept = 0;
        for (int f = 0; f < nf; ++f) {
            if (edb[f] <= mx - 40.0) continue;
            if (static_cast<int>(xs.size()) < kept * hop + flen) {
                xs.resize(kept * hop + flen, 0.0);
                ys.resize(kept * hop + flen, 0.0);
            }
            for (int i = 0; i < flen; ++i) {
                xs[kept * hop + i] += x[f * hop + i] * w[i];
                ys[kept * hop + i] += y[f * hop + i] * w[i];
            }
            ++kept;
        }
        x = xs;
        y = ys;
    }

    const int nf = (static_cast<int>(x.size()) - flen) / hop + 1;
    REQUIRE(nf >= N);

    auto envelopes = [&](const std::vector<double>& sig) {
        std::vector<std::vector<double>> env(J, std::vector<double>(nf, 0.0));
        std::vector<double>              fr(nfft, 0.0);
        for (int f = 0; f < nf; ++f) {
            std::fill(fr.begin(), fr.end(), 0.0);
            for (int i = 0; i < flen; ++i) fr[i] = sig[f * hop + i] * w[i];
            auto sp = fft::rfft(fr);
            for (int j = 0; j < J; ++j) {
                const double fc = 150.0 * std::pow(2.0, j / 3.0);
                double       e  = 0.0;
                for (size_t b = 0; b < sp.size(); ++b) {
                    const double fhz = static_cast<double>(b) * fs / nfft;
                    if (fhz >= fc * std::pow(2.0, -1.0 / 6.0) &&
                        fhz < fc * std::pow(2.0, 1.0 / 6.0))
                        e += std::norm(sp[b]);
                }
                env[j][f] = std::sqrt(e);
            }
        }
        return env;
    };
    auto ex = envelopes(x);
    auto ey = envelopes(y);

    auto unit = [](std::vector<double> v) {
        double m = 0.0;
        for (double a : v) m += a;
        m /= static_cast<double>(v.size());
        double nn = 0.0;
        for (auto& a : v) {
            a -= m;
            nn += a * a;
        }
        nn = std::sqrt(nn);
        for (auto& a : v) a = nn > 1e-20 ? a / nn : 0.0;
        return v;
    };

    double total = 0.0;
    const int segs = nf - N + 1;
    for (int s = 0; s < segs; ++s) {
        std::vector<std::vector<double>> RX(J), RY(J);
        for (int j = 0; j < J; ++j) {
            RX[j] = unit(std::vector<double>(ex[j].begin() + s, ex[j].begin() + s + N));
            RY[j] = unit(std::vector<double>(ey[j].begin() + s, ey[j].begin() + s + N));
        }
        double seg = 0.0;
        for (int n = 0; n < N; ++n) {
            std::vector<double> cx(J), cy(J);
            for (int j = 0; j < J; ++j) {
                cx[j] = RX[j][n];
                cy[j] = RY[j][n];
            }
            cx = unit(cx);
            cy = unit(cy);
            double d = 0.0;
            for (int j = 0; j < J; ++j) d += cx[j] * cy[j];
            seg += d;
        }
        total += seg / N;
    }
    return total / segs;
}

}  // namespace

TEST_CASE("si-sdr projection identities", "[metrics]") {
    Waveform ref = speechish(0.5, 1);

    SECTION("perfect and rescaled estimates hit the +inf sentinel") {
        REQUIRE(std::isinf(si_sdr(ref, ref)));
        Waveform twice = ref;
        for (auto& v : twice.samples) v *= 2.0;
        REQUIRE(std::isinf(si_sdr(ref, twice)));
    }

    SECTION("orthogonal equal-energy error gives exactly 0 dB") {
        Waveform r, e;
        r.sample_rate = e.sample_rate = 16000;
        r.samples.resize(16000);
        e.samples.resize(16000);
        for (int i = 0; i < 16000; ++i) {
            const double t = i / 16000.0;
            r.samples[static_cast<size_t>(i)] = std::sin(2.0 * kPi * 50.0 * t);
            e.samples[static_cast<size_t>(i)] =
                r.samples[static_cast<size_t>(i)] + std::cos(2.0 * kPi * 50.0 * t);
        }
        REQUIRE(si_sdr(r, e) == Catch::Approx(0.0).margin(1e-9));
    }

    SECTION("random pair matches an elementwise recomputation") {
        Rng      rng(7);
        Waveform est = ref;
        for (auto& v : est.samples) v = 0.8 * v + 0.05 * rng.normal();

        double dot = 0.0, rr = 0.0;
        for (size_t i = 0; i < ref.size(); ++i) {
            dot += est.samples[i] * ref.samples[i];
            rr += ref.samples[i] * ref.samples[i];
        }
        const double alpha = dot / rr;
        double       num = 0.0, den = 0.0;
        for (size_t i = 0; i < ref.size(); ++i) {
            const double s = alpha * ref.samples[i];
            num += s * s;
            den += (est.samples[i] - s) * (est.samples[i] - s);
        }
        REQUIRE(si_sdr(ref, est) ==
                Catch::Approx(10.0 * std::log10(num / den)).margin(1e-9));
    }

    SECTION("scale invariance in the estimate and joint scaling") {
        Rng      rng(9);
        Waveform est = ref;
        for (auto& v : est.samples) v += 0.1 * rng.normal();
        const double base = si_sdr(ref, est);
        for (double alpha : {-3.0, 0.5, 10.0}) {
            Waveform scaled = est;
            for (auto& v : scaled.samples) v *= alpha;
            REQUIRE(si_sdr(ref, scaled) == Catch::Approx(base).margin(1e-9));
        }
        Waveform r2 = ref, e2 = est;
        for (auto& v : r2.samples) v *= 0.25;
        for (auto& v : e2.samples) v *= 0.25;
        REQUIRE(si_sdr(r2, e2) == Catch::Approx(base).margin(1e-9));
    }

    SECTION("degenerate inputs are rejected") {
        Waveform zero = ref;
        for (auto& v : zero.samples) v = 0.0;
        REQUIRE_THROWS_AS(si_sdr(zero, ref), DegenerateInputError);
        Waveform shorter = ref;
        shorter.samples.pop_back();
        REQUIRE_THROWS_AS(si_sdr(ref, shorter), LengthError);
        Waveform wrong_rate = ref;
        wrong_rate.sample_rate = 8000;
        REQUIRE_THROWS_AS(si_sdr(ref, wrong_rate), ConfigError);
    }
}

TEST_CASE("intelligibility score fundamentals", "[metrics]") {
    Waveform ref = speechish(1.0, 21);

    SECTION("self-comparison scores 1") {
        REQUIRE(estoi(ref, ref) == Catch::Approx(1.0).margin(1e-9));
    }

    SECTION("global sign flips are invisible to magnitude envelopes") {
        Waveform neg = ref;
        for (auto& v : neg.samples) v = -v;
        REQUIRE(estoi(ref, neg) == Catch::Approx(1.0).margin(1e-9));
        REQUIRE(estoi(neg, ref) == Catch::Approx(1.0).margin(1e-9));
    }

    SECTION("independent noise scores below 0.2 across 20 seeds") {
        for (uint64_t seed = 0; seed < 20; ++seed) {
            Waveform n = make_noise(0, ref.size(), 16000, 1000 + seed);
            for (auto& v : n.samples) v *= ref.rms();
            const double d = estoi(ref, n);
            CAPTURE(seed, d);
            REQUIRE(d < 0.2);
        }
    }

    SECTION("additive noise degrades the score monotonically") {
        const double sigmas[] = {0.0, 0.05, 0.1, 0.2, 0.5};
        for (uint64_t seed = 0; seed < 10; ++seed) {
            Waveform n = make_noise(0, ref.size(), 16000, 2000 + seed);
            double   prev = 2.0;
            for (double s : sigmas) {
                Waveform deg = ref;
                for (size_t i = 0; i < deg.size(); ++i) deg.samples[i] += s * n.samples[i];
                const double d = estoi(ref, deg);
                CAPTURE(seed, s, d, prev);
                REQUIRE(d <= prev + 1e-6);
                REQUIRE(d >= -1.0);
                REQUIRE(d <= 1.0);
                prev = d;
            }
        }
    }

    SECTION("validation: length, rate, silence") {
        Waveform shorter = ref;
        shorter.samples.resize(4000);
        REQUIRE_THROWS_AS(estoi(ref, shorter), LengthError);
        REQUIRE_THROWS_AS(estoi(shorter, shorter), LengthError);

        Waveform wrong = ref;
        wrong.sample_rate = 10000;
        REQUIRE_THROWS_AS(estoi(wrong, wrong), ConfigError);

        Waveform silent = ref;
        for (auto& v : silent.samples) v = 0.0;
        REQUIRE_THROWS_AS(estoi(silent, ref), DegenerateInputError);
    }
}

TEST_CASE("intelligibility score matches an independent reimplementation", "[metrics]") {
    Waveform ref = speechish(1.2, 31);

    SECTION("clean vs mildly degraded") {
        Rng      rng(32);
        Waveform deg = ref;
        for (auto& v : deg.samples) v = v + 0.05 * rng.normal();
        REQUIRE(estoi(ref, deg) == Catch::Approx(estoi_oracle(ref, deg)).margin(1e-9));
    }

    SECTION("clean vs heavily degraded") {
        Waveform n = make_noise(1, ref.size(), 16000, 33);
        Waveform deg = ref;
        for (size_t i = 0; i < deg.size(); ++i) deg.samples[i] += 0.4 * n.samples[i];
        const double lib = estoi(ref, deg);
        REQUIRE(lib == Catch::Approx(estoi_oracle(ref, deg)).margin(1e-9));
        REQUIRE(lib < estoi(ref, ref));
    }

    SECTION("clipped speech") {
        Waveform deg = soft_clip(ref, 4.0);
        REQUIRE(estoi(ref, deg) == Catch::Approx(estoi_oracle(ref, deg)).margin(1e-9));
    }
}

TEST_CASE("paired t-test against closed forms", "[metrics]") {
    SECTION("identical samples: t = 0, p = 1") {
        std::vector<double> a{1.0, 2.0, 3.0, 4.0};
        auto                r = paired_t_test(a, a);
        REQUIRE(r.t == 0.0);
        REQUIRE(r.p == 1.0);
    }

    SECTION("constant nonzero difference hits the infinity sentinel") {
        auto r = paired_t_test({1.0, 2.0, 3.0}, {0.0, 1.0, 2.0});
        REQUIRE(std::isinf(r.t));
        REQUIRE(r.t > 0.0);
        REQUIRE(r.p == 0.0);
    }

    SECTION("hand-computed four-pair example, p from the nu=3 closed form") {
        std::vector<double> a{2.1, 1.9, 2.0, 2.2}, b{1.0, 1.1, 0.9, 1.0};
        auto                r = paired_t_test(a, b);

        const double d[4] = {1.1, 0.8, 1.1, 1.2};
        double       m = 0.0;
        for (double x : d) m += x;
        m /= 4.0;
        double v = 0.0;
        for (double x : d) v += (x - m) * (x - m);
        v /= 3.0;
        const double t_oracle = m / std::sqrt(v / 4.0);
        REQUIRE(r.t == Catch::Approx(t_oracle).margin(1e-9));

        // Student-t CDF with three degrees of freedom has an elementary form
        const double u        = t_oracle / std::sqrt(3.0);
        const double cdf      = 0.5 + (std::atan(u) + u / (1.0 + u * u)) / kPi;
        const double p_oracle = 2.0 * (1.0 - cdf);
        REQUIRE(r.p == Catch::Approx(p_oracle).epsilon(1e-9));
    }

    SECTION("antisymmetry under argument swap") {
        std::vector<double> a{3.2, 2.8, 3.5, 2.9, 3.1}, b{2.0, 2.2, 2.4, 2.1, 2.6};
        auto                ab = paired_t_test(a, b);
        auto                ba = paired_t_test(b, a);
        REQUIRE(ab.t == Catch::Approx(-ba.t).margin(1e-12));
        REQUIRE(ab.p == Catch::Approx(ba.p).margin(1e-12));
    }

    SECTION("too few pairs") {
        REQUIRE_THROWS_AS(paired_t_test({1.0}, {2.0}), LengthError);
        REQUIRE_THROWS_AS(paired_t_test({1.0, 2.0}, {2.0}), LengthError);
    }
}

TEST_CASE("report aggregation", "[metrics]") {
    SECTION("single record aggregates to itself") {
        auto rep = aggregate_report({{"a", Category::NoiseOnly, 5.5, 0.8}});
        REQUIRE(rep.overall.count == 1);
        REQUIRE(rep.overall.mean_si_sdr == 5.5);
        REQUIRE(rep.overall.std_si_sdr == 0.0);
        REQUIRE(rep.overall.mean_estoi == 0.8);
        REQUIRE(rep.per_category.size() == 1);
    }

    SECTION("two categories produce two rows plus overall") {
        auto rep = aggregate_report({{"a", Category::NoiseOnly, 4.0, 0.7},
                                     {"b", Category::ReverbOnly, 6.0, 0.9},
                                     {"c", Category::NoiseOnly, 2.0, 0.5}});
        REQUIRE(rep.per_category.size() == 2);
        REQUIRE(rep.per_category.at(Category::NoiseOnly).count == 2);
        REQUIRE(rep.per_category.at(Category::NoiseOnly).mean_si_sdr == Catch::Approx(3.0));
        REQUIRE(rep.per_category.at(Category::ReverbOnly).count == 1);
        REQUIRE(rep.overall.count == 3);
        REQUIRE(rep.overall.mean_si_sdr == Catch::Approx(4.0));
    }

    SECTION("a hundred records match a plain summation oracle") {
        Rng                       rng(41);
        std::vector<MetricRecord> rs;
        double                    sum_sdr = 0.0, sum_st = 0.0;
        for (int i = 0; i < 100; ++i) {
            MetricRecord r;
            r.id        = "r" + std::to_string(i);
            r.category  = static_cast<Category>(i % kNumCategories);
            r.si_sdr_db = rng.uniform(-5.0, 20.0);
            r.estoi     = rng.uniform(0.0, 1.0);
            sum_sdr += r.si_sdr_db;
            sum_st += r.estoi;
            rs.push_back(r);
        }
        auto rep = aggregate_report(rs);
        REQUIRE(rep.overall.mean_si_sdr == Catch::Approx(sum_sdr / 100.0).margin(1e-12));
        REQUIRE(rep.overall.mean_estoi == Catch::Approx(sum_st / 100.0).margin(1e-12));
        REQUIRE(rep.per_category.size() == static_cast<size_t>(kNumCategories));
    }

    SECTION("infinite sentinels are excluded from means but counted") {
        auto rep = aggregate_report(
            {{"a", Category::NoiseOnly, std::numeric_limits<double>::infinity(), 1.0},
             {"b", Category::NoiseOnly, 4.0, 0.6}});
        REQUIRE(rep.overall.count == 2);
        REQUIRE(rep.overall.infinite_sdr == 1);
        REQUIRE(rep.overall.mean_si_sdr == 4.0);
        REQUIRE(rep.overall.mean_estoi == Catch::Approx(0.8));
    }

    SECTION("empty input is rejected") {
        REQUIRE_THROWS_AS(aggregate_report({}), LengthError);
    }
}

TEST_CASE("report serialization", "[metrics]") {
    auto rep = aggregate_report({{"x1", Category::NoiseOnly, 3.25, 0.71},
                                 {"x2", Category::DistortOnly,
                                  std::numeric_limits<double>::infinity(), 0.99}});

    SECTION("csv carries nullable external-metric columns") {
        std::ostringstream os;
        write_report_csv(os, rep);
        std::istringstream is(os.str());
        std::string        line;
        std::getline(is, line);
        REQUIRE(line == "id,category,si_sdr_db,estoi,pesq,utmos");
        std::getline(is, line);
        REQUIRE(line.rfind("x1,noise,3.25,0.71,,", 0) == 0);
        std::getline(is, line);
        REQUIRE(line.find("inf") != std::string::npos);
    }

    SECTION("json aggregates parse back") {
        std::ostringstream os;
        write_report_json(os, rep);
        auto j = nlohmann::json::parse(os.str());
        REQUIRE(j.contains("overall"));
        REQUIRE(j.at("overall").at("count").get<int>() == 2);
        REQUIRE(j.at("overall").at("infinite_sdr").get<int>() == 1);
        REQUIRE(j.at("noise").at("mean_si_sdr").get<double>() == Catch::Approx(3.25));
        REQUIRE(j.at("distort").at("count").get<int>() == 1);
    }
}
