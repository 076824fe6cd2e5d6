#pragma once

// Closed forms for the NFIR feedback benchmark
//   y(t) = u(t-1) + u(t-2) w^2(t),   u(t) = r(t) - alpha y(t),   w ~ N(0, sigma_w^2)

#include <array>
#include <cmath>
#include <complex>

#include <blatk/error.hpp>

namespace blatk::oracle {

using cplx = std::complex<double>;

struct NfirParams {
    double alpha{0.3};
    double sigma_w{0.75};
    double sigma_r{1.0};
    double sigma_u{0.0};
    double sample_time{1.0};
};

/// e^{-jwTs} + sigma_w^2 e^{-2jwTs}
inline cplx nfir_bla_true(const NfirParams& p, double omega) {
    const double th = omega * p.sample_time;
    return std::polar(1.0, -th) + p.sigma_w * p.sigma_w * std::polar(1.0, -2.0 * th);
}

/// |1 + alpha G|^2 * 2 sigma_u^2 sigma_w^4 / sigma_r^2 (one realization, one period, full band)
inline double nfir_bla_var_true(const NfirParams& p, double omega) {
    if (!(p.sigma_r > 0.0)) {
        throw ConfigError("nfir_bla_var_true: sigma_r must be positive");
    }
    const double s2 = p.sigma_w * p.sigma_w;
    return std::norm(1.0 + p.alpha * nfir_bla_true(p, omega)) * 2.0 * p.sigma_u * p.sigma_u * s2 * s2 /
           (p.sigma_r * p.sigma_r);
}

struct RyRu {
    cplx g_ry;
    cplx g_ru;
};

/// Reference-to-output and reference-to-input BLAs at a point z on the unit circle.
inline RyRu nfir_ry_ru_true(const NfirParams& p, cplx z) {
    if (std::abs(std::abs(z) - 1.0) > 1e-9) {
        throw ConfigError("nfir_ry_ru_true: z must lie on the unit circle");
    }
    const double s2  = p.sigma_w * p.sigma_w;
    const cplx   zi  = 1.0 / z;
    const cplx   den = 1.0 + p.alpha * zi + p.alpha * s2 * zi * zi;
    if (std::abs(den) < 1e-14) {
        throw NumericError("nfir_ry_ru_true: denominator vanishes (stability boundary)");
    }
    return {(zi + s2 * zi * zi) / den, 1.0 / den};
}

/// Roots of z^2 + alpha z + alpha sigma_w^2.
inline std::array<cplx, 2> nfir_poles(double alpha, double sigma_w) {
    const double c    = alpha * sigma_w * sigma_w;
    const cplx   disc = std::sqrt(cplx(alpha * alpha - 4.0 * c, 0.0));
    // numerically stable pairing
    const cplx q = -0.5 * (alpha + (alpha >= 0.0 ? disc : -disc));
    if (q == cplx(0.0, 0.0)) {
        return {cplx(0.0, 0.0), cplx(0.0, 0.0)};
    }
    return {q, c / q};
}

/// 0 < alpha < min(4 sigma_w^2, sigma_w^-2) for sigma_w > 0, |alpha| < 1 for sigma_w = 0.
inline bool nfir_stability_ok(double alpha, double sigma_w) {
    if (!std::isfinite(alpha) || !std::isfinite(sigma_w)) {
        return false;
    }
    if (sigma_w == 0.0) {
        return std::abs(alpha) < 1.0;
    }
    const double s2 = sigma_w * sigma_w;
    return alpha > 0.0 && alpha < std::min(4.0 * s2, 1.0 / s2);
}

/// sigma_u^2 * 2 sigma_w^4
inline double nfir_yp_var_true(double sigma_u, double sigma_w) {
    const double s2 = sigma_w * sigma_w;
    return sigma_u * sigma_u * 2.0 * s2 * s2;
}

} // namespace blatk::oracle
