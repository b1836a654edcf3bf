#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "dcse/degrade.hpp"
#include "dcse/fft.hpp"
#include "dcse/stft.hpp"
#include "dcse/wave.hpp"

namespace dcse {

// ---------------------------------------------------------------------------
// SI-SDR
// ---------------------------------------------------------------------------

// Scale-invariant signal-to-distortion ratio in dB. The estimate is projected
// onto the reference; a zero residual returns +infinity.
inline double si_sdr(const Waveform& reference, const Waveform& estimate) {
    reference.validate();
    estimate.validate();
    if (reference.sample_rate != estimate.sample_rate)
        throw ConfigError("si_sdr: sample rate mismatch");
    if (reference.size() != estimate.size()) throw LengthError("si_sdr: length mismatch");

    double dot = 0.0, ref_e = 0.0;
    for (size_t i = 0; i < reference.size(); ++i) {
        dot += estimate.samples[i] * reference.samples[i];
        ref_e += reference.samples[i] * reference.samples[i];
    }
    if (ref_e <= 0.0) throw DegenerateInputError("si_sdr: reference has zero energy");

    const double a = dot / ref_e;
    double       target_e = 0.0, resid_e = 0.0;
    for (size_t i = 0; i < reference.size(); ++i) {
        const double s = a * reference.samples[i];
        const double e = estimate.samples[i] - s;
        target_e += s * s;
        resid_e += e * e;
    }
    if (resid_e == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(target_e / resid_e);
}

// ---------------------------------------------------------------------------
// ESTOI (16 kHz variant)
// ---------------------------------------------------------------------------

// The standard algorithm runs at 10 kHz; this artifact has no resampler, so
// the identical structure operates directly at 16 kHz: 25.6 ms frames
// (410 samples), 50% hop, 1024-point FFT, 15 one-third-octave bands from
// 150 Hz, 30-frame (384 ms) segments, and 40 dB silent-frame removal.
struct EstoiConfig {
    int    sample_rate   = 16000;
    int    frame_length  = 410;
    int    hop_length    = 205;
    int    fft_size      = 1024;
    int    n_bands       = 15;
    double lowest_center = 150.0;
    int    segment_len   = 30;
    double dyn_range_db  = 40.0;
};

namespace detail {

inline std::vector<double> estoi_window(int n) {
    std::vector<double> w(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        w[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);
    return w;
}

// Remove frames whose windowed energy sits more than dyn_range_db below the
// loudest reference frame, rebuilding both signals by overlap-add of the
// surviving frames.
inline void remove_silent_frames(std::vector<double>& x, std::vector<double>& y,
                                 const EstoiConfig& cfg) {
    const int  n   = static_cast<int>(x.size());
    const auto win = estoi_window(cfg.frame_length);
    const int  frames = n < cfg.frame_length ? 0 : (n - cfg.frame_length) / cfg.hop_length + 1;
    if (frames == 0) throw LengthError("estoi: input shorter than one frame");

    std::vector<double> energy_db(static_cast<size_t>(frames));
    double              peak = -std::numeric_limits<double>::infinity();
    for (int f = 0; f < frames; ++f) {
        double e = 0.0;
        for (int i = 0; i < cfg.frame_length; ++i) {
            const double v = x[static_cast<size_t>(f * cfg.hop_length + i)] *
                             win[static_cast<size_t>(i)];
            e += v * v;
        }
        energy_db[static_cast<size_t>(f)] = 10.0 * std::log10(e + 1e-300);
        peak = std::max(peak, energy_db[static_cast<size_t>(f)]);
    }
    if (!std::isfinite(peak) || peak <= -250.0)
        throw DegenerateInputError("estoi: silent reference");

    std::vector<int> keep;
    for (int f = 0; f < frames; ++f)
        if (energy_db[static_cast<size_t>(f)] > peak - cfg.dyn_range_db) keep.push_back(f);

    const int out_len = (static_cast<int>(keep.size()) - 1) * cfg.hop_length + cfg.frame_length;
    std::vector<double> xo(static_cast<size_t>(out_len), 0.0);
    std::vector<double> yo(static_cast<size_t>(out_len), 0.0);
    for (size_t k = 0; k < keep.size(); ++k) {
        const int src = keep[k] * cfg.hop_length;
        const int dst = static_cast<int>(k) * cfg.hop_length;
        for (int i = 0; i < cfg.frame_length; ++i) {
            xo[static_cast<size_t>(dst + i)] +=
                x[static_cast<size_t>(src + i)] * win[static_cast<size_t>(i)];
            yo[static_cast<size_t>(dst + i)] +=
                y[static_cast<size_t>(src + i)] * win[static_cast<size_t>(i)];
        }
    }
    x = std::move(xo);
    y = std::move(yo);
}

// [n_bands x frames] one-third-octave amplitude envelopes
inline std::vector<double> third_octave_envelopes(const std::vector<double>& x,
                                                  const EstoiConfig& cfg, int* out_frames) {
    const int  frames = (static_cast<int>(x.size()) - cfg.frame_length) / cfg.hop_length + 1;
    const auto win    = estoi_window(cfg.frame_length);
    const int  bins   = cfg.fft_size / 2 + 1;

    std::vector<std::pair<int, int>> band_bins;
    for (int k = 0; k < cfg.n_bands; ++k) {
        const double fc = cfg.lowest_center * std::pow(2.0, k / 3.0);
        const double lo = fc * std::pow(2.0, -1.0 / 6.0);
        const double hi = fc * std::pow(2.0, 1.0 / 6.0);
        int b_lo = bins, b_hi = -1;
        for (int b = 0; b < bins; ++b) {
            const double f = static_cast<double>(b) * cfg.sample_rate / cfg.fft_size;
            if (f >= lo && f < hi) {
                b_lo = std::min(b_lo, b);
                b_hi = std::max(b_hi, b);
            }
        }
        band_bins.emplace_back(b_lo, b_hi);
    }

    std::vector<double> env(static_cast<size_t>(cfg.n_bands) * frames, 0.0);
    std::vector<double> frame(static_cast<size_t>(cfg.fft_size), 0.0);
    for (int f = 0; f < frames; ++f) {
        std::fill(frame.begin(), frame.end(), 0.0);
        for (int i = 0; i < cfg.frame_length; ++i)
            frame[static_cast<size_t>(i)] =
                x[static_cast<size_t>(f * cfg.hop_length + i)] * win[static_cast<size_t>(i)];
        const auto spec = fft::rfft(frame);
        for (int k = 0; k < cfg.n_bands; ++k) {
            double e = 0.0;
            for (int b = band_bins[static_cast<size_t>(k)].first;
                 b <= band_bins[static_cast<size_t>(k)].second; ++b)
                e += std::norm(spec[static_cast<size_t>(b)]);
            env[static_cast<size_t>(k) * frames + f] = std::sqrt(e);
        }
    }
    *out_frames = frames;
    return env;
}

// subtract the mean and scale to unit norm; an all-equal vector maps to zero
inline void normalize_vec(double* v, int n) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += v[i];
    mean /= n;
    double norm = 0.0;
    for (int i = 0; i < n; ++i) {
        v[i] -= mean;
        norm += v[i] * v[i];
    }
    norm = std::sqrt(norm);
    if (norm > 1e-20)
        for (int i = 0; i < n; ++i) v[i] /= norm;
    else
        for (int i = 0; i < n; ++i) v[i] = 0.0;
}

}  // namespace detail

inline double estoi(const Waveform& reference, const Waveform& estimate,
                    const EstoiConfig& cfg = {}) {
    reference.validate();
    estimate.validate();
    if (reference.sample_rate != cfg.sample_rate || estimate.sample_rate != cfg.sample_rate)
        throw ConfigError("estoi: expected " + std::to_string(cfg.sample_rate) + " Hz input");
    if (reference.size() != estimate.size()) throw LengthError("estoi: length mismatch");

    std::vector<double> x = reference.samples, y = estimate.samples;
    detail::remove_silent_frames(x, y, cfg);

    int        frames = 0;
    const auto ex     = detail::third_octave_envelopes(x, cfg, &frames);
    const auto ey     = detail::third_octave_envelopes(y, cfg, &frames);
    if (frames < cfg.segment_len)
        throw LengthError("estoi: fewer than " + std::to_string(cfg.segment_len) +
                          " frames after silence removal");

    const int J = cfg.n_bands, N = cfg.segment_len;
    const int n_segments = frames - N + 1;

    double acc = 0.0;
    std::vector<double> X(static_cast<size_t>(J) * N), Y(static_cast<size_t>(J) * N);
    for (int s = 0; s < n_segments; ++s) {
        for (int j = 0; j < J; ++j)
            for (int n = 0; n < N; ++n) {
                X[static_cast<size_t>(j) * N + n] = ex[static_cast<size_t>(j) * frames + s + n];
                Y[static_cast<size_t>(j) * N + n] = ey[static_cast<size_t>(j) * frames + s + n];
            }
        // rows: temporal envelope per band
        for (int j = 0; j < J; ++j) {
            detail::normalize_vec(&X[static_cast<size_t>(j) * N], N);
            detail::normalize_vec(&Y[static_cast<size_t>(j) * N], N);
        }
        // columns: spectral shape per frame
        std::vector<double> cx(static_cast<size_t>(J)), cy(static_cast<size_t>(J));
        double seg = 0.0;
        for (int n = 0; n < N; ++n) {
            for (int j = 0; j < J; ++j) {
                cx[static_cast<size_t>(j)] = X[static_cast<size_t>(j) * N + n];
                cy[static_cast<size_t>(j)] = Y[static_cast<size_t>(j) * N + n];
            }
            detail::normalize_vec(cx.data(), J);
            detail::normalize_vec(cy.data(), J);
            double dot = 0.0;
            for (int j = 0; j < J; ++j) dot += cx[static_cast<size_t>(j)] * cy[static_cast<size_t>(j)];
            seg += dot;
        }
        acc += seg / static_cast<double>(N);
    }
    return acc / static_cast<double>(n_segments);
}

// ---------------------------------------------------------------------------
// paired t-test
// ---------------------------------------------------------------------------

namespace detail {

// regularized incomplete beta I_x(a, b) by Lentz's continued fraction
inline double betacf(double a, double b, double x) {
    const double eps = 3e-16, fpmin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double       c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < fpmin) d = fpmin;
    d        = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
        const int    m2 = 2 * m;
        double       aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d               = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d  = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d                = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) break;
    }
    return h;
}

inline double reg_inc_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace detail

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
};

// Two-sided paired t-test on d = a - b.
inline TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw LengthError("paired_t_test: length mismatch");
    const size_t n = a.size();
    if (n < 2) throw LengthError("paired_t_test: need at least two pairs");

    double mean = 0.0;
    for (size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(n - 1);

    TTestResult r;
    if (var == 0.0) {
        if (mean == 0.0) return r;  // t = 0, p = 1
        r.t = mean > 0.0 ? std::numeric_limits<double>::infinity()
                         : -std::numeric_limits<double>::infinity();
        r.p = 0.0;
        return r;
    }
    const double nu = static_cast<double>(n - 1);
    r.t             = mean / std::sqrt(var / static_cast<double>(n));
    r.p             = detail::reg_inc_beta(nu / 2.0, 0.5, nu / (nu + r.t * r.t));
    return r;
}

// ---------------------------------------------------------------------------
// aggregation
// ---------------------------------------------------------------------------

struct MetricRecord {
    std::string id;
    Category    category = Category::NoiseOnly;
    double      si_sdr_db = 0.0;
    double      estoi     = 0.0;
};

struct MetricAggregate {
    double mean_si_sdr   = 0.0;
    double std_si_sdr    = 0.0;
    double mean_estoi    = 0.0;
    double std_estoi     = 0.0;
    int    count         = 0;  // records in the group
    int    infinite_sdr  = 0;  // +inf sentinels, excluded from the SI-SDR mean
};

struct MetricReport {
    std::vector<MetricRecord>         records;
    std::map<Category, MetricAggregate> per_category;
    MetricAggregate                   overall;
};

namespace detail {

inline double kahan_sum(const std::vector<double>& xs) {
    double s = 0.0, c = 0.0;
    for (double x : xs) {
        const double y = x - c;
        const double t = s + y;
        c              = (t - s) - y;
        s              = t;
    }
    return s;
}

inline MetricAggregate aggregate_group(const std::vector<const MetricRecord*>& rs) {
    MetricAggregate a;
    a.count = static_cast<int>(rs.size());
    std::vector<double> sdr, st;
    for (const auto* r : rs) {
        if (std::isinf(r->si_sdr_db)) ++a.infinite_sdr;
        else sdr.push_back(r->si_sdr_db);
        st.push_back(r->estoi);
    }
    auto mean_std = [](const std::vector<double>& xs, double* mean, double* sd) {
        if (xs.empty()) {
            *mean = 0.0;
            *sd   = 0.0;
            return;
        }
        *mean = kahan_sum(xs) / static_cast<double>(xs.size());
        if (xs.size() < 2) {
            *sd = 0.0;
            return;
        }
        std::vector<double> dev;
        dev.reserve(xs.size());
        for (double x : xs) dev.push_back((x - *mean) * (x - *mean));
        *sd = std::sqrt(kahan_sum(dev) / static_cast<double>(xs.size() - 1));
    };
    mean_std(sdr, &a.mean_si_sdr, &a.std_si_sdr);
    mean_std(st, &a.mean_estoi, &a.std_estoi);
    return a;
}

}  // namespace detail

inline MetricReport aggregate_report(const std::vector<MetricRecord>& records) {
    if (records.empty()) throw LengthError("aggregate_report: no records");
    MetricReport rep;
    rep.records = records;

    std::map<Category, std::vector<const MetricRecord*>> groups;
    std::vector<const MetricRecord*>                     all;
    for (const auto& r : rep.records) {
        groups[r.category].push_back(&r);
        all.push_back(&r);
    }
    for (const auto& [cat, rs] : groups) rep.per_category[cat] = detail::aggregate_group(rs);
    rep.overall = detail::aggregate_group(all);
    return rep;
}

// Per-item CSV; pesq/utmos stay empty so externally computed values can merge.
inline void write_report_csv(std::ostream& os, const MetricReport& rep) {
    os << "id,category,si_sdr_db,estoi,pesq,utmos\n";
    for (const auto& r : rep.records) {
        os << r.id << ',' << category_name(r.category) << ',';
        if (std::isinf(r.si_sdr_db)) os << "inf";
        else os << r.si_sdr_db;
        os << ',' << r.estoi << ",,\n";
    }
}

inline void write_report_json(std::ostream& os, const MetricReport& rep) {
    auto agg = [&](const MetricAggregate& a, const std::string& name, bool last) {
        os << "  \"" << name << "\": {\"mean_si_sdr\": " << a.mean_si_sdr
           << ", \"std_si_sdr\": " << a.std_si_sdr << ", \"mean_estoi\": " << a.mean_estoi
           << ", \"std_estoi\": " << a.std_estoi << ", \"count\": " << a.count
           << ", \"infinite_sdr\": " << a.infinite_sdr << "}" << (last ? "\n" : ",\n");
    };
    os << "{\n";
    for (const auto& [cat, a] : rep.per_category) agg(a, category_name(cat), false);
    agg(rep.overall, "overall", true);
    os << "}\n";
}

}  // namespace dcse
