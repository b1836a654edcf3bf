#pragma once

#include <complex>
#include <map>
#include <mutex>
#include <vector>

#include <fftw3.h>

#include "dcse/common.hpp"

namespace dcse::fft {

// Thin FFTW wrapper with a mutex-guarded plan cache. Plans are created
// once per transform size with FFTW_ESTIMATE (deterministic algorithm
// choice); execution uses the new-array interface on per-call buffers so
// concurrent callers never share scratch.
namespace detail {

struct PlanCache {
    std::mutex mu;
    std::map<int, fftw_plan> r2c;
    std::map<int, fftw_plan> c2r;

    fftw_plan get_r2c(int n) {
        std::lock_guard<std::mutex> lock(mu);
        auto it = r2c.find(n);
        if (it != r2c.end()) return it->second;
        double*       in  = fftw_alloc_real(static_cast<size_t>(n));
        fftw_complex* out = fftw_alloc_complex(static_cast<size_t>(n) / 2 + 1);
        fftw_plan     p   = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
        fftw_free(in);
        fftw_free(out);
        r2c.emplace(n, p);
        return p;
    }

    fftw_plan get_c2r(int n) {
        std::lock_guard<std::mutex> lock(mu);
        auto it = c2r.find(n);
        if (it != c2r.end()) return it->second;
        fftw_complex* in  = fftw_alloc_complex(static_cast<size_t>(n) / 2 + 1);
        double*       out = fftw_alloc_real(static_cast<size_t>(n));
        fftw_plan     p   = fftw_plan_dft_c2r_1d(n, in, out, FFTW_ESTIMATE);
        fftw_free(in);
        fftw_free(out);
        c2r.emplace(n, p);
        return p;
    }
};

inline PlanCache& cache() {
    static PlanCache c;
    return c;
}

}  // namespace detail

// Real-to-complex FFT; returns n/2 + 1 one-sided bins.
inline std::vector<std::complex<double>> rfft(const std::vector<double>& x) {
    const int n = static_cast<int>(x.size());
    if (n <= 0) throw LengthError("rfft: empty input");
    fftw_plan     plan = detail::cache().get_r2c(n);
    double*       in   = fftw_alloc_real(static_cast<size_t>(n));
    fftw_complex* out  = fftw_alloc_complex(static_cast<size_t>(n) / 2 + 1);
    for (int i = 0; i < n; ++i) in[i] = x[static_cast<size_t>(i)];
    fftw_execute_dft_r2c(plan, in, out);
    std::vector<std::complex<double>> spec(static_cast<size_t>(n) / 2 + 1);
    for (size_t k = 0; k < spec.size(); ++k) spec[k] = {out[k][0], out[k][1]};
    fftw_free(in);
    fftw_free(out);
    return spec;
}

// Inverse of rfft, normalized so irfft(rfft(x), n) == x.
inline std::vector<double> irfft(const std::vector<std::complex<double>>& spec, int n) {
    if (n <= 0 || spec.size() != static_cast<size_t>(n) / 2 + 1)
        throw ConfigError("irfft: bin count inconsistent with length");
    fftw_plan     plan = detail::cache().get_c2r(n);
    fftw_complex* in   = fftw_alloc_complex(spec.size());
    double*       out  = fftw_alloc_real(static_cast<size_t>(n));
    for (size_t k = 0; k < spec.size(); ++k) {
        in[k][0] = spec[k].real();
        in[k][1] = spec[k].imag();
    }
    fftw_execute_dft_c2r(plan, in, out);
    std::vector<double> x(static_cast<size_t>(n));
    const double        inv = 1.0 / static_cast<double>(n);
    for (int i = 0; i < n; ++i) x[static_cast<size_t>(i)] = out[i] * inv;
    fftw_free(in);
    fftw_free(out);
    return x;
}

}  // namespace dcse::fft
