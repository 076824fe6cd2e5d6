#pragma once

// Local polynomial FRF fit. Around a target bin l0 and over a window of neighbouring fit bins
//
//   Y(l) = sum_{i<=R} a_i d^i R(l) + sum_{i<=R} b_i d^i,   d = (l - l0) / span
//
// and likewise for U with the same regressors. a_0 is the FRF from the reference, b_0 the
// transient. The noise covariance of (Y, U) comes either from transient-only fits over nearby
// noise bins (bins without any periodic content) or, without such bins, from the fit residuals.
//
// Windows hold an odd number of bins with the target in the middle. Near DC and Nyquist they
// continue onto the mirrored bins X(-l) = conj X(l), X(L-l) = conj X(l) of the real record, so
// the fit never extrapolates.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include <blatk/error.hpp>
#include <blatk/spectra.hpp>

namespace blatk {

struct LpmConfig {
    std::size_t poly_order{2};
    std::size_t dof{10};

    [[nodiscard]] std::size_t parameters() const noexcept { return 2 * (poly_order + 1); }
    /// parameters + dof, plus one when that is even so the target can sit in the middle
    [[nodiscard]] std::size_t window() const noexcept { return (parameters() + dof) | 1U; }
    [[nodiscard]] std::size_t noise_window() const noexcept { return poly_order + 1 + dof; }

    void validate() const {
        if (dof < 1) {
            throw ConfigError("lpm: dof must be >= 1");
        }
        if (poly_order > 10) {
            throw ConfigError("lpm: polynomial order above 10 is not supported");
        }
    }
};

/// Hermitian 2x2 covariance of (Y, U): yy, uu real, yu = E{Y conj(U)}.
struct Cov2 {
    double yy{0.0};
    double uu{0.0};
    cplx   yu{0.0, 0.0};
};

namespace lpm_flag {
inline constexpr unsigned widened     = 1U << 0; ///< rank deficient at the nominal window
inline constexpr unsigned edge        = 1U << 1; ///< window wraps through DC or Nyquist
inline constexpr unsigned invalid     = 1U << 2; ///< still rank deficient, or g_ru vanishes
inline constexpr unsigned noise_alias = 1U << 3; ///< no noise bins; noise taken from residuals
} // namespace lpm_flag

struct LpmBin {
    std::size_t target{0};
    cplx        g_ry{0.0, 0.0};
    cplx        g_ru{0.0, 0.0};
    cplx        transient_y{0.0, 0.0};
    cplx        transient_u{0.0, 0.0};
    Cov2        residual;  ///< per-bin covariance from the joint fit residuals
    Cov2        noise;     ///< per-bin noise covariance
    double      leverage{0.0}; ///< [(K^H K)^-1]_00
    double      dof{0.0};      ///< residual degrees of freedom of the joint fit
    double      noise_dof{0.0};
    unsigned    flags{0};

    [[nodiscard]] bool valid() const noexcept { return (flags & lpm_flag::invalid) == 0U; }
};

namespace detail {

/// Indices [start, start+width) of `sorted` centred on `target`, one-sided at both ends.
inline std::optional<std::pair<std::size_t, bool>> window_start(std::span<const std::size_t> sorted, std::size_t target,
                                                                std::size_t width) {
    if (sorted.size() < width || width == 0) {
        return std::nullopt;
    }
    const auto        pos    = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), target) - sorted.begin());
    const std::size_t half   = width / 2;
    std::size_t       start  = pos >= half ? pos - half : 0;
    bool              edge   = pos < half;
    if (start + width > sorted.size()) {
        start = sorted.size() - width;
        edge  = true;
    }
    return std::make_pair(start, edge);
}

inline Cov2 residual_cov(const Eigen::VectorXcd& ey, const Eigen::VectorXcd& eu, double dof) {
    Cov2 c;
    c.yy = ey.squaredNorm() / dof;
    c.uu = eu.squaredNorm() / dof;
    c.yu = eu.dot(ey) / dof; // sum ey conj(eu)
    return c;
}

struct NoiseFit {
    Cov2   cov;
    double dof{0.0};
};

/// Transient-only polynomial fits of Y and U over the noise bins nearest the target.
inline std::optional<NoiseFit> noise_fit(const Spectrum& U, const Spectrum& Y, std::span<const std::size_t> noise_bins,
                                         std::size_t target, const LpmConfig& cfg) {
    const std::size_t width = cfg.noise_window();
    const auto        ws    = window_start(noise_bins, target, width);
    if (!ws) {
        return std::nullopt;
    }
    const std::size_t npar = cfg.poly_order + 1;
    double            span = 1.0;
    for (std::size_t i = 0; i < width; ++i) {
        span = std::max(span, std::abs(static_cast<double>(noise_bins[ws->first + i]) - static_cast<double>(target)));
    }
    Eigen::MatrixXcd K(width, npar);
    Eigen::VectorXcd y(width), u(width);
    for (std::size_t i = 0; i < width; ++i) {
        const std::size_t l = noise_bins[ws->first + i];
        const double      d = (static_cast<double>(l) - static_cast<double>(target)) / span;
        double            p = 1.0;
        for (std::size_t r = 0; r < npar; ++r, p *= d) {
            K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r)) = p;
        }
        y(static_cast<Eigen::Index>(i)) = Y.bins[l];
        u(static_cast<Eigen::Index>(i)) = U.bins[l];
    }
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXcd> qr(K);
    const double                                       dof = static_cast<double>(width - npar);
    return NoiseFit{residual_cov(y - K * qr.solve(y), u - K * qr.solve(u), dof), dof};
}

} // namespace detail

namespace detail {

/// A regression point on the unwrapped frequency axis: bin `src`, conjugated when mirrored.
struct Node {
    long        pos;
    std::size_t src;
    bool        mirrored;
};

/// Fit bins plus their images at -l and L - l, sorted by position.
inline std::vector<Node> unwrapped_grid(std::span<const std::size_t> bins, std::size_t record_len) {
    std::vector<Node> g;
    g.reserve(3 * bins.size());
    const auto L = static_cast<long>(record_len);
    for (auto b : bins) {
        const auto l = static_cast<long>(b);
        g.push_back({l, b, false});
        if (l > 0) {
            g.push_back({-l, b, true});
            if (2 * l != L) g.push_back({L - l, b, true});
        }
    }
    std::sort(g.begin(), g.end(), [](const Node& a, const Node& b) { return a.pos < b.pos; });
    return g;
}

/// Window around position t: the target (if it is a node) plus the nearest symmetric pairs
/// (t - d, t + d) until `width` nodes are reached, so odd powers of d cancel at the centre.
/// Falls back to the `width` nearest nodes when too few pairs exist.
inline std::vector<std::size_t> symmetric_window(const std::vector<Node>& grid, long t, std::size_t width) {
    std::vector<std::size_t> idx;
    if (width > grid.size()) {
        return idx;
    }
    const auto find = [&](long pos) -> std::optional<std::size_t> {
        const auto it = std::lower_bound(grid.begin(), grid.end(), pos, [](const Node& n, long v) { return n.pos < v; });
        if (it == grid.end() || it->pos != pos) return std::nullopt;
        return static_cast<std::size_t>(it - grid.begin());
    };
    const auto centre = static_cast<std::size_t>(
        std::lower_bound(grid.begin(), grid.end(), t, [](const Node& n, long v) { return n.pos < v; }) - grid.begin());
    if (const auto c = find(t)) idx.push_back(*c);
    for (std::size_t i = centre; i < grid.size() && idx.size() < width; ++i) {
        if (grid[i].pos <= t) continue;
        if (const auto m = find(2 * t - grid[i].pos)) {
            idx.push_back(*m);
            idx.push_back(i);
        }
    }
    if (idx.size() >= width) {
        return idx;
    }
    // not enough pairs: nearest nodes, one-sided at the ends
    idx.clear();
    const std::size_t half  = width / 2;
    std::size_t       start = centre >= half ? centre - half : 0;
    start                   = std::min(start, grid.size() - width);
    for (std::size_t i = start; i < start + width; ++i) idx.push_back(i);
    return idx;
}

} // namespace detail

/// Local polynomial fit at each target bin.
///   targets    : bins where the FRF is wanted (indices into the spectra)
///   fit_bins   : ascending bins carrying reference power, used as regression points
///   noise_bins : ascending bins with noise and transient only; may be empty
inline std::vector<LpmBin> lpm_fit(const Spectrum& R, const Spectrum& U, const Spectrum& Y, const LpmConfig& cfg,
                                   std::span<const std::size_t> targets, std::span<const std::size_t> fit_bins,
                                   std::span<const std::size_t> noise_bins = {}) {
    cfg.validate();
    if (R.size() != U.size() || R.size() != Y.size()) {
        throw ConfigError("lpm: spectra differ in length");
    }
    if (fit_bins.size() < cfg.window()) {
        throw ConfigError("lpm: fewer fit bins than the window needs");
    }
    for (auto l : fit_bins) {
        if (l >= R.size()) throw ConfigError("lpm: fit bin out of range");
    }
    for (auto l : noise_bins) {
        if (l >= R.size()) throw ConfigError("lpm: noise bin out of range");
    }
    const std::size_t   np   = cfg.poly_order + 1;
    const auto          grid = detail::unwrapped_grid(fit_bins, R.n_samples);
    const auto          at   = [](const Spectrum& X, const detail::Node& n) {
        return n.mirrored ? std::conj(X.bins[n.src]) : X.bins[n.src];
    };
    std::vector<LpmBin> out;
    out.reserve(targets.size());

    for (std::size_t target : targets) {
        LpmBin bin;
        bin.target    = target;
        const auto t  = static_cast<long>(target);

        std::size_t width = cfg.window();
        bool        done  = false;
        for (int attempt = 0; attempt < 2 && !done; ++attempt, width += 2) {
            const auto win = detail::symmetric_window(grid, t, width);
            if (win.empty()) {
                break;
            }
            width       = win.size();
            double span = 1.0;
            for (auto i : win) {
                span = std::max(span, std::abs(static_cast<double>(grid[i].pos - t)));
                if (grid[i].mirrored) bin.flags |= lpm_flag::edge;
            }
            const auto       W = static_cast<Eigen::Index>(width);
            Eigen::MatrixXcd K(W, static_cast<Eigen::Index>(2 * np));
            Eigen::VectorXcd y(W), u(W);
            for (Eigen::Index i = 0; i < W; ++i) {
                const auto&  n = grid[win[static_cast<std::size_t>(i)]];
                const double d = static_cast<double>(n.pos - t) / span;
                const cplx   r = at(R, n);
                double       p = 1.0;
                for (std::size_t q = 0; q < np; ++q, p *= d) {
                    K(i, static_cast<Eigen::Index>(q))      = r * p;
                    K(i, static_cast<Eigen::Index>(np + q)) = p;
                }
                y(i) = at(Y, n);
                u(i) = at(U, n);
            }
            Eigen::ColPivHouseholderQR<Eigen::MatrixXcd> qr(K);
            qr.setThreshold(1e-10);
            if (qr.rank() < K.cols()) {
                bin.flags |= lpm_flag::widened;
                continue;
            }
            const Eigen::VectorXcd ty = qr.solve(y);
            const Eigen::VectorXcd tu = qr.solve(u);
            bin.g_ry                  = ty(0);
            bin.g_ru                  = tu(0);
            bin.transient_y           = ty(static_cast<Eigen::Index>(np));
            bin.transient_u           = tu(static_cast<Eigen::Index>(np));
            bin.dof                   = static_cast<double>(width - 2 * np);
            bin.residual              = detail::residual_cov(y - K * ty, u - K * tu, bin.dof);
            const Eigen::MatrixXcd KhK = K.adjoint() * K;
            const Eigen::VectorXcd e0  = KhK.ldlt().solve(Eigen::VectorXcd::Unit(K.cols(), 0));
            bin.leverage               = e0(0).real();
            done                       = true;
        }
        if (!done) {
            bin.flags |= lpm_flag::invalid;
            out.push_back(bin);
            continue;
        }
        if (const auto nf = detail::noise_fit(U, Y, noise_bins, target, cfg)) {
            bin.noise     = nf->cov;
            bin.noise_dof = nf->dof;
        } else {
            bin.noise     = bin.residual;
            bin.noise_dof = bin.dof;
            bin.flags |= lpm_flag::noise_alias;
        }
        out.push_back(bin);
    }
    return out;
}

/// Targets and fit bins both equal to `excited`, no separate noise bins.
inline std::vector<LpmBin> lpm_fit(const Spectrum& R, const Spectrum& U, const Spectrum& Y, const LpmConfig& cfg,
                                   std::span<const std::size_t> excited) {
    return lpm_fit(R, U, Y, cfg, excited, excited, {});
}

/// First-order variance of g_ry / g_ru for a per-bin covariance and regression leverage.
inline double ratio_variance(const Cov2& c, cplx g, cplx g_ru, double leverage) {
    const double num = c.yy + std::norm(g) * c.uu - 2.0 * std::real(std::conj(g) * c.yu);
    return std::max(num, 0.0) * leverage / std::norm(g_ru);
}

} // namespace blatk
