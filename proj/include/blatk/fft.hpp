#pragma once

// Real-input DFT of arbitrary even length, backed by FFTW. Plans are cached per thread
// and per length; FFTW's planner is not reentrant, so plan creation is serialized.

#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include <fftw3.h>

namespace blatk::fft {

namespace detail {

inline std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

class RealPlan {
public:
    explicit RealPlan(std::size_t n) : n_(n) {
        real_ = static_cast<double*>(fftw_malloc(sizeof(double) * n));
        spec_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)));
        std::scoped_lock lock(planner_mutex());
        const int len = static_cast<int>(n);
        forward_      = fftw_plan_dft_r2c_1d(len, real_, spec_, FFTW_ESTIMATE);
        backward_     = fftw_plan_dft_c2r_1d(len, spec_, real_, FFTW_ESTIMATE);
    }
    RealPlan(const RealPlan&)            = delete;
    RealPlan& operator=(const RealPlan&) = delete;
    ~RealPlan() {
        std::scoped_lock lock(planner_mutex());
        fftw_destroy_plan(forward_);
        fftw_destroy_plan(backward_);
        fftw_free(real_);
        fftw_free(spec_);
    }

    /// Unnormalized forward transform; returns bins 0..n/2.
    void forward(std::span<const double> x, std::span<std::complex<double>> out) {
        std::copy(x.begin(), x.end(), real_);
        fftw_execute(forward_);
        for (std::size_t k = 0; k <= n_ / 2; ++k) {
            out[k] = {spec_[k][0], spec_[k][1]};
        }
    }

    /// Unnormalized inverse of a Hermitian half spectrum (bins 0..n/2).
    void backward(std::span<const std::complex<double>> half, std::span<double> out) {
        for (std::size_t k = 0; k <= n_ / 2; ++k) {
            spec_[k][0] = half[k].real();
            spec_[k][1] = half[k].imag();
        }
        fftw_execute(backward_); // c2r destroys its input; spec_ is scratch
        std::copy(real_, real_ + n_, out.begin());
    }

private:
    std::size_t   n_;
    double*       real_{nullptr};
    fftw_complex* spec_{nullptr};
    fftw_plan     forward_{nullptr};
    fftw_plan     backward_{nullptr};
};

inline RealPlan& plan_for(std::size_t n) {
    thread_local std::map<std::size_t, std::unique_ptr<RealPlan>> cache;
    auto& slot = cache[n];
    if (!slot) {
        slot = std::make_unique<RealPlan>(n);
    }
    return *slot;
}

} // namespace detail

/// Bins 0..n/2 of sum_t x(t) exp(-j 2 pi k t / n) / sqrt(n).
inline std::vector<std::complex<double>> forward_scaled(std::span<const double> x) {
    const std::size_t                 n = x.size();
    std::vector<std::complex<double>> out(n / 2 + 1);
    detail::plan_for(n).forward(x, out);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    for (auto& v : out) {
        v *= scale;
    }
    return out;
}

/// Real signal of length n whose scaled DFT has the given bins 0..n/2.
inline std::vector<double> inverse_scaled(std::span<const std::complex<double>> half, std::size_t n) {
    std::vector<double> out(n);
    detail::plan_for(n).backward(half, out);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    for (auto& v : out) {
        v *= scale;
    }
    return out;
}

} // namespace blatk::fft
