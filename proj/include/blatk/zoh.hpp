#pragma once

// Step-invariant (zero-order-hold) discretization of continuous-time Volterra kernels.
//
// With h_a(t_1..t_a) the a-fold integral of the kernel from the origin, the discrete kernel is
// the a-dimensional first difference of h sampled on the T_s grid. Degree 1:
//   g_zoh(n) = h(n T_s) - h((n-1) T_s),  g_zoh(0) = 0.
// Continuous kernels are given sampled on a fine grid of step T_s / os, os an integer >= 32.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include <blatk/error.hpp>
#include <blatk/volterra.hpp>

namespace blatk {

inline constexpr std::size_t min_oversampling = 32;

namespace detail {

inline std::size_t oversampling(double fine_step, double ts) {
    if (!(ts > 0.0) || !(fine_step > 0.0)) {
        throw ConfigError("zoh: sample times must be positive");
    }
    const double ratio = ts / fine_step;
    const double os    = std::round(ratio);
    if (std::abs(ratio - os) > 1e-9 * ratio) {
        throw ConfigError("zoh: T_s must be an integer multiple of the kernel grid step");
    }
    if (os < static_cast<double>(min_oversampling)) {
        throw ConfigError("zoh: kernel grid must oversample T_s by at least 32");
    }
    return static_cast<std::size_t>(os);
}

/// The grid must reach past the support: last sample small against the peak.
inline void check_support(std::span<const double> g) {
    double peak = 0.0;
    for (double v : g) peak = std::max(peak, std::abs(v));
    if (peak == 0.0) return;
    if (std::abs(g.back()) > 1e-6 * peak) {
        throw ConfigError("zoh: kernel support not covered by the provided grid");
    }
}

/// Cumulative trapezoid, h[0] = 0.
inline std::vector<double> cumtrapz(std::span<const double> g, double dt) {
    std::vector<double> h(g.size(), 0.0);
    for (std::size_t i = 1; i < g.size(); ++i) {
        h[i] = h[i - 1] + 0.5 * dt * (g[i - 1] + g[i]);
    }
    return h;
}

/// Taps from a sampled 1-D kernel; the number of taps covers the grid.
inline std::vector<double> zoh_axis(std::span<const double> g, double dt, double ts) {
    const std::size_t os = oversampling(dt, ts);
    if (g.size() < 2) {
        throw ConfigError("zoh: kernel grid needs at least two samples");
    }
    check_support(g);
    const auto          h     = cumtrapz(g, dt);
    const std::size_t   n_tap = (g.size() - 1) / os + 1;
    std::vector<double> taps(n_tap + 1, 0.0);
    for (std::size_t n = 1; n <= n_tap; ++n) {
        const double hn  = h[std::min(n * os, h.size() - 1)];
        const double hn1 = h[(n - 1) * os];
        taps[n]          = hn - hn1;
    }
    return taps;
}

} // namespace detail

/// c * exp(-rate * t)
struct ExpTerm {
    double gain{1.0};
    double rate{1.0};
};

/// Exact taps of a sum of decaying exponentials, truncated once every term is below rel_tol.
inline VolterraKernel step_invariant_deg1(std::span<const ExpTerm> terms, double ts, double rel_tol = 1e-14) {
    if (!(ts > 0.0)) {
        throw ConfigError("zoh: T_s must be positive");
    }
    double slowest = std::numeric_limits<double>::infinity();
    for (const auto& e : terms) {
        if (!(e.rate > 0.0)) {
            throw ConfigError("zoh: exponential rates must be positive");
        }
        slowest = std::min(slowest, e.rate);
    }
    if (terms.empty()) {
        return VolterraKernel::taps({0.0});
    }
    const auto          n_tap = static_cast<std::size_t>(std::ceil(-std::log(rel_tol) / (slowest * ts))) + 1;
    std::vector<double> taps(n_tap + 1, 0.0);
    for (std::size_t n = 1; n <= n_tap; ++n) {
        for (const auto& e : terms) {
            taps[n] += e.gain / e.rate * (-std::expm1(-e.rate * ts)) * std::exp(-e.rate * ts * static_cast<double>(n - 1));
        }
    }
    return VolterraKernel::taps(std::move(taps));
}

inline VolterraKernel step_invariant_deg1(const VolterraKernel& g1, double ts) {
    if (g1.domain() != TimeDomain::continuous) {
        throw ConfigError("zoh: kernel is already discrete");
    }
    const auto* grid = std::get_if<DenseGrid>(&g1.form());
    if (grid != nullptr && grid->degree == 1) {
        return VolterraKernel::taps(detail::zoh_axis(grid->values, grid->step, ts));
    }
    const auto* sep = std::get_if<SeparableAxes>(&g1.form());
    if (sep != nullptr && sep->axes.size() == 1) {
        auto taps = detail::zoh_axis(sep->axes[0], sep->step, ts);
        for (auto& v : taps) v *= sep->gain;
        return VolterraKernel::taps(std::move(taps));
    }
    throw ConfigError("zoh: degree-1 transform needs a degree-1 kernel");
}

/// Degree 2 from a dense grid (cumulative 2-D trapezoid, four-corner difference) or per axis
/// from separable factors.
inline VolterraKernel step_invariant_deg2(const VolterraKernel& g2, double ts) {
    if (g2.domain() != TimeDomain::continuous) {
        throw ConfigError("zoh: kernel is already discrete");
    }
    if (const auto* sep = std::get_if<SeparableAxes>(&g2.form())) {
        if (sep->axes.size() != 2) {
            throw ConfigError("zoh: degree-2 transform needs a degree-2 kernel");
        }
        SeparableAxes out{sep->gain, 1.0, {}};
        for (const auto& ax : sep->axes) {
            out.axes.push_back(detail::zoh_axis(ax, sep->step, ts));
        }
        return VolterraKernel::separable(std::move(out));
    }
    const auto* grid = std::get_if<DenseGrid>(&g2.form());
    if (grid == nullptr || grid->degree != 2) {
        throw ConfigError("zoh: degree-2 transform needs a degree-2 kernel");
    }
    const std::size_t os = detail::oversampling(grid->step, ts);
    const std::size_t L  = grid->extent;
    const double      dt = grid->step;
    if (L < 2) {
        throw ConfigError("zoh: kernel grid needs at least two samples per axis");
    }
    double peak = 0.0, edge = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
        for (std::size_t j = 0; j < L; ++j) {
            const double v = std::abs(grid->values[i * L + j]);
            peak           = std::max(peak, v);
            if (i == L - 1 || j == L - 1) edge = std::max(edge, v);
        }
    }
    if (peak > 0.0 && edge > 1e-6 * peak) {
        throw ConfigError("zoh: kernel support not covered by the provided grid");
    }
    // h2(i, j) = integral over [0, t_i] x [0, t_j], trapezoid in each direction
    std::vector<double> h(L * L, 0.0);
    std::vector<double> row(L, 0.0);
    for (std::size_t i = 0; i < L; ++i) {
        // cumulative along j for row i
        std::vector<double> c(L, 0.0);
        for (std::size_t j = 1; j < L; ++j) {
            c[j] = c[j - 1] + 0.5 * dt * (grid->values[i * L + j - 1] + grid->values[i * L + j]);
        }
        for (std::size_t j = 0; j < L; ++j) {
            h[i * L + j] = i == 0 ? 0.0 : h[(i - 1) * L + j] + 0.5 * dt * (row[j] + c[j]);
        }
        row = std::move(c);
    }
    const std::size_t n_tap = (L - 1) / os + 1;
    const auto        H     = [&](std::size_t a, std::size_t b) {
        return h[std::min(a * os, L - 1) * L + std::min(b * os, L - 1)];
    };
    DenseGrid out{2, n_tap + 1, 1.0, std::vector<double>((n_tap + 1) * (n_tap + 1), 0.0)};
    for (std::size_t n1 = 1; n1 <= n_tap; ++n1) {
        for (std::size_t n2 = 1; n2 <= n_tap; ++n2) {
            out.values[n1 * (n_tap + 1) + n2] = H(n1, n2) - H(n1 - 1, n2) - H(n1, n2 - 1) + H(n1 - 1, n2 - 1);
        }
    }
    return VolterraKernel::dense(std::move(out));
}

/// Any degree for separable kernels; dense grids only up to degree 2.
inline VolterraKernel step_invariant_degN(const VolterraKernel& g, double ts) {
    if (g.domain() != TimeDomain::continuous) {
        throw ConfigError("zoh: kernel is already discrete");
    }
    if (const auto* sep = std::get_if<SeparableAxes>(&g.form())) {
        if (sep->axes.size() == 1) {
            return step_invariant_deg1(g, ts);
        }
        SeparableAxes out{sep->gain, 1.0, {}};
        for (const auto& ax : sep->axes) {
            out.axes.push_back(detail::zoh_axis(ax, sep->step, ts));
        }
        return VolterraKernel::separable(std::move(out));
    }
    if (const auto* grid = std::get_if<DenseGrid>(&g.form())) {
        if (grid->degree == 1) return step_invariant_deg1(g, ts);
        if (grid->degree == 2) return step_invariant_deg2(g, ts);
    }
    throw ConfigError("unsupported form");
}

/// Full tensor of a discrete dense or separable kernel.
inline DenseGrid materialize(const VolterraKernel& k) {
    if (const auto* grid = std::get_if<DenseGrid>(&k.form())) {
        return *grid;
    }
    const auto* sep = std::get_if<SeparableAxes>(&k.form());
    if (sep == nullptr) {
        throw ConfigError("materialize: NFIR kernels have no dense form");
    }
    std::size_t L = 0;
    for (const auto& ax : sep->axes) L = std::max(L, ax.size());
    const std::size_t d     = sep->axes.size();
    std::size_t       total = 1;
    for (std::size_t i = 0; i < d; ++i) total *= L;
    DenseGrid                out{d, L, sep->step, std::vector<double>(total, 0.0)};
    std::vector<std::size_t> idx(d, 0);
    for (std::size_t flat = 0; flat < total; ++flat) {
        double v = sep->gain;
        for (std::size_t a = 0; a < d; ++a) {
            v *= idx[a] < sep->axes[a].size() ? sep->axes[a][idx[a]] : 0.0;
        }
        out.values[flat] = v;
        for (std::size_t a = d; a-- > 0;) {
            if (++idx[a] < L) break;
            idx[a] = 0;
        }
    }
    return out;
}

} // namespace blatk
