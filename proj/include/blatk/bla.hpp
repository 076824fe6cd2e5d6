#pragma once

// Nonparametric BLA estimators on a SignalEnsemble.
//
//   robust   : M realizations x P periods; total variance from the spread over realizations,
//              noise variance from the period-to-period spread.
//   fast     : period-averaged ratio at excited bins; total variance from the output residual at
//              neighbouring detection lines (in-band bins left unexcited).
//   fast_lpm : local polynomial fit on the full P-period record of each realization, so the
//              transient is modelled rather than discarded.
//
// Variances refer to the returned (averaged) estimate g.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <blatk/error.hpp>
#include <blatk/lpm.hpp>
#include <blatk/signals.hpp>
#include <blatk/spectra.hpp>
#include <blatk/volterra.hpp>

namespace blatk {

enum class Method { robust, fast, fast_lpm };

inline const char* method_name(Method m) {
    switch (m) {
    case Method::robust: return "robust";
    case Method::fast: return "fast";
    case Method::fast_lpm: return "fast-lpm";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    if (s == "robust") return Method::robust;
    if (s == "fast") return Method::fast;
    if (s == "fast-lpm" || s == "fast_lpm") return Method::fast_lpm;
    throw ConfigError("unknown method '" + s + "'");
}

namespace bin_flag {
inline constexpr unsigned clipped     = 1U << 0; ///< var_total < var_noise, var_nl set to 0
inline constexpr unsigned widened     = 1U << 1; ///< LPM window widened in some realization
inline constexpr unsigned edge        = 1U << 2; ///< LPM window one-sided
inline constexpr unsigned noise_alias = 1U << 3; ///< no noise bins; noise variance from residuals
} // namespace bin_flag

enum class LineClass { odd, even };

struct DetectionLine {
    std::size_t k{0};
    LineClass   cls{LineClass::odd};
    double      power{0.0}; ///< mean |Y - G U|^2 of the period-averaged spectra
};

struct BlaMeta {
    std::size_t                   realizations{0};
    std::size_t                   periods{0};
    std::size_t                   n_samples{0};
    double                        clock_freq{1.0};
    double                        reference_power{0.0}; ///< sigma_r^2 of one period
    std::string                   system;
    std::map<std::string, double> params;
    std::uint64_t                 seed{0};
    std::string                   config_digest;
    std::size_t                   averaged{0}; ///< realizations entering the average
    LpmConfig                     lpm;         ///< fast_lpm only
};

struct BlaEstimate {
    std::vector<std::size_t> bins;
    std::vector<double>      freq;
    std::vector<cplx>        g;
    std::vector<double>      var_noise;
    std::vector<double>      var_total;
    std::vector<double>      var_nl;
    std::vector<unsigned>    flags;
    std::vector<double>      dof_total; ///< complex degrees of freedom of var_total, per bin
    std::vector<double>      dof_noise;
    std::vector<std::size_t> excluded; ///< excited bins dropped (vanishing input or rank deficiency)
    std::vector<DetectionLine> detection;
    Method                   method{Method::robust};
    BlaMeta                  meta;

    [[nodiscard]] std::size_t size() const noexcept { return bins.size(); }

    /// Applies the subtraction rule and sets the clipping flags.
    void finish() {
        var_nl.assign(bins.size(), 0.0);
        for (std::size_t i = 0; i < bins.size(); ++i) {
            const double d = var_total[i] - var_noise[i];
            if (d > 0.0) {
                var_nl[i] = d;
            } else {
                flags[i] |= bin_flag::clipped;
            }
        }
    }

    void push(std::size_t k, double f, cplx gk, double vn, double vt, unsigned fl, double nu_t, double nu_n) {
        bins.push_back(k);
        freq.push_back(f);
        g.push_back(gk);
        var_noise.push_back(vn);
        var_total.push_back(vt);
        flags.push_back(fl);
        dof_total.push_back(nu_t);
        dof_noise.push_back(nu_n);
    }
};

inline constexpr double min_gain = 1e-300;

inline std::optional<cplx> bla_from_reference(cplx g_ry, cplx g_ru) {
    if (!(std::abs(g_ru) >= min_gain)) {
        return std::nullopt;
    }
    return g_ry / g_ru;
}

namespace detail {

inline std::vector<std::size_t> excited_of(const SignalEnsemble& e) {
    if (!e.meta.excited.empty()) {
        return e.meta.excited;
    }
    const auto ks = detect_excited(scaled_dft(e.period(Channel::reference, 0, 0), e.clock_freq()));
    if (ks.empty()) {
        throw ConfigError("reference channel carries no excited harmonics");
    }
    return ks;
}

inline BlaMeta meta_of(const SignalEnsemble& e) {
    BlaMeta m;
    m.realizations  = e.realizations();
    m.periods       = e.periods();
    m.n_samples     = e.n_samples();
    m.clock_freq    = e.clock_freq();
    m.system        = e.meta.system;
    m.params        = e.meta.params;
    m.seed          = e.meta.seed;
    m.config_digest = e.meta.config_digest;
    m.averaged      = e.realizations();
    if (e.has(Channel::reference)) {
        double acc = 0.0;
        for (std::size_t r = 0; r < e.realizations(); ++r) {
            acc += population_variance(e.period(Channel::reference, r, 0));
        }
        m.reference_power = acc / static_cast<double>(e.realizations());
    }
    return m;
}

/// Period mean and per-bin noise covariance of the mean, for one realization.
struct PeriodAverage {
    Spectrum          u, y;
    std::vector<Cov2> cov_of_mean; ///< empty if P == 1
};

inline PeriodAverage period_average(const SignalEnsemble& e, std::size_t m) {
    std::vector<Spectrum> us, ys;
    for (std::size_t p = 0; p < e.periods(); ++p) {
        us.push_back(scaled_dft(e.period(Channel::input, m, p), e.clock_freq()));
        ys.push_back(scaled_dft(e.period(Channel::output, m, p), e.clock_freq()));
    }
    const bool    var = e.periods() >= 2;
    auto          su  = sample_stats(us, var);
    auto          sy  = sample_stats(ys, var);
    PeriodAverage out{std::move(su.mean), std::move(sy.mean), {}};
    if (var) {
        const auto   cyu = sample_cross_covariance(ys, us);
        const double P   = static_cast<double>(e.periods());
        out.cov_of_mean.resize(cyu.size());
        for (std::size_t k = 0; k < cyu.size(); ++k) {
            out.cov_of_mean[k] = {sy.variance[k] / P, su.variance[k] / P, cyu[k] / P};
        }
    }
    return out;
}

/// |U(k)| below this fraction of the largest excited |U| counts as zero input.
inline constexpr double input_floor_rel = 1e-12;

/// Ratio Y/U at bin k, empty when the input vanishes there.
inline std::optional<cplx> frf_at(const PeriodAverage& avg, std::size_t k, double u_peak) {
    if (std::abs(avg.u.bins[k]) <= input_floor_rel * u_peak) {
        return std::nullopt;
    }
    return bla_from_reference(avg.y.bins[k], avg.u.bins[k]);
}

inline double input_peak(const PeriodAverage& avg, std::span<const std::size_t> ks) {
    double m = 0.0;
    for (auto k : ks) m = std::max(m, std::abs(avg.u.bins[k]));
    return m;
}

inline void require_channels(const SignalEnsemble& e) {
    if (!e.has(Channel::input) || !e.has(Channel::output)) {
        throw ConfigError("estimator needs input and output channels");
    }
}

} // namespace detail

inline BlaEstimate bla_robust(const SignalEnsemble& e) {
    detail::require_channels(e);
    if (e.realizations() < 2 || e.periods() < 2) {
        throw ConfigError("robust method needs M >= 2 and P >= 2");
    }
    const auto        ks = detail::excited_of(e);
    const std::size_t M  = e.realizations();
    const std::size_t P  = e.periods();

    std::vector<std::vector<cplx>>   gm(ks.size());
    std::vector<std::vector<double>> vn(ks.size());
    for (std::size_t m = 0; m < M; ++m) {
        const auto   avg  = detail::period_average(e, m);
        const double peak = detail::input_peak(avg, ks);
        for (std::size_t i = 0; i < ks.size(); ++i) {
            const std::size_t k  = ks[i];
            const auto        gk = detail::frf_at(avg, k, peak);
            if (!gk) continue;
            gm[i].push_back(*gk);
            vn[i].push_back(ratio_variance(avg.cov_of_mean[k], *gk, avg.u.bins[k], 1.0));
        }
    }

    BlaEstimate est;
    est.method = Method::robust;
    est.meta   = detail::meta_of(e);
    for (std::size_t i = 0; i < ks.size(); ++i) {
        const std::size_t k = ks[i];
        if (gm[i].size() != M) {
            est.excluded.push_back(k);
            continue;
        }
        cplx mean{0.0, 0.0};
        for (auto v : gm[i]) mean += v;
        mean /= static_cast<double>(M);
        double spread = 0.0;
        for (auto v : gm[i]) spread += std::norm(v - mean);
        const double var_t = spread / static_cast<double>(M - 1) / static_cast<double>(M);
        double       var_n = 0.0;
        for (auto v : vn[i]) var_n += v;
        var_n /= static_cast<double>(M) * static_cast<double>(M);
        est.push(k, static_cast<double>(k) * e.clock_freq() / static_cast<double>(e.n_samples()), mean, var_n, var_t, 0U, static_cast<double>(M - 1), static_cast<double>(M * (P - 1)));
    }
    est.finish();
    return est;
}

/// In-band non-excited bins (between the lowest and highest excited harmonic).
inline std::vector<std::size_t> detection_lines(std::span<const std::size_t> excited) {
    std::vector<std::size_t> lines;
    if (excited.empty()) return lines;
    std::size_t next = 0;
    for (std::size_t k = excited.front(); k <= excited.back(); ++k) {
        if (next < excited.size() && excited[next] == k) {
            ++next;
            continue;
        }
        lines.push_back(k);
    }
    return lines;
}

inline BlaEstimate bla_fast(const SignalEnsemble& e, std::span<const std::size_t> excited_in) {
    detail::require_channels(e);
    if (e.periods() < 2) {
        throw ConfigError("fast method needs P >= 2");
    }
    std::vector<std::size_t> ks(excited_in.begin(), excited_in.end());
    if (ks.empty()) {
        ks = detail::excited_of(e);
    }
    std::sort(ks.begin(), ks.end());
    const auto lines = detection_lines(ks);
    if (lines.empty()) {
        throw ConfigError("fast method requires detection lines");
    }
    const std::size_t M = e.realizations();
    const std::size_t P = e.periods();

    std::vector<cplx>     g_sum(ks.size(), {0.0, 0.0});
    std::vector<double>   vn_sum(ks.size(), 0.0), vt_sum(ks.size(), 0.0);
    std::vector<std::size_t> count(ks.size(), 0);
    std::vector<double>   line_power(lines.size(), 0.0);

    // nearest excited index for each line, and up to two lines on each side of each excited bin
    std::vector<std::size_t> nearest(lines.size());
    for (std::size_t j = 0; j < lines.size(); ++j) {
        const auto it = std::lower_bound(ks.begin(), ks.end(), lines[j]);
        std::size_t hi = static_cast<std::size_t>(it - ks.begin());
        std::size_t lo = hi == 0 ? 0 : hi - 1;
        if (hi >= ks.size()) hi = ks.size() - 1;
        nearest[j] = (lines[j] - ks[lo] <= ks[hi] - lines[j]) ? lo : hi;
    }
    std::vector<std::vector<std::size_t>> neighbours(ks.size());
    for (std::size_t i = 0; i < ks.size(); ++i) {
        const auto  it  = std::lower_bound(lines.begin(), lines.end(), ks[i]);
        const auto  pos = static_cast<std::size_t>(it - lines.begin());
        for (std::size_t d = 1; d <= 2 && d <= pos; ++d) neighbours[i].push_back(pos - d);
        for (std::size_t d = 0; d < 2 && pos + d < lines.size(); ++d) neighbours[i].push_back(pos + d);
    }

    for (std::size_t m = 0; m < M; ++m) {
        const auto          avg  = detail::period_average(e, m);
        const double        peak = detail::input_peak(avg, ks);
        std::vector<cplx>   gm(ks.size(), {0.0, 0.0});
        std::vector<bool>   ok(ks.size(), false);
        for (std::size_t i = 0; i < ks.size(); ++i) {
            if (const auto gk = detail::frf_at(avg, ks[i], peak)) {
                gm[i] = *gk;
                ok[i] = true;
            }
        }
        std::vector<double> resid(lines.size());
        for (std::size_t j = 0; j < lines.size(); ++j) {
            const std::size_t l = lines[j];
            resid[j]            = std::norm(avg.y.bins[l] - gm[nearest[j]] * avg.u.bins[l]);
            line_power[j] += resid[j];
        }
        for (std::size_t i = 0; i < ks.size(); ++i) {
            if (!ok[i]) continue;
            const std::size_t k = ks[i];
            double            r = 0.0;
            for (auto j : neighbours[i]) r += resid[j];
            r /= static_cast<double>(neighbours[i].size());
            g_sum[i] += gm[i];
            vt_sum[i] += r / std::norm(avg.u.bins[k]);
            vn_sum[i] += ratio_variance(avg.cov_of_mean[k], gm[i], avg.u.bins[k], 1.0);
            ++count[i];
        }
    }

    BlaEstimate est;
    est.method = Method::fast;
    est.meta   = detail::meta_of(e);
    const double Md = static_cast<double>(M);
    for (std::size_t i = 0; i < ks.size(); ++i) {
        if (count[i] != M) {
            est.excluded.push_back(ks[i]);
            continue;
        }
        est.push(ks[i], static_cast<double>(ks[i]) * e.clock_freq() / static_cast<double>(e.n_samples()), g_sum[i] / Md,
                 vn_sum[i] / (Md * Md), vt_sum[i] / (Md * Md), 0U,
                 Md * static_cast<double>(neighbours[i].size()), Md * static_cast<double>(P - 1));
    }
    for (std::size_t j = 0; j < lines.size(); ++j) {
        est.detection.push_back({lines[j], lines[j] % 2 == 1 ? LineClass::odd : LineClass::even, line_power[j] / Md});
    }
    est.finish();
    return est;
}

/// Mean detection-line power per class; NaN when the class is empty.
inline double detection_power(const BlaEstimate& est, LineClass cls) {
    double      acc = 0.0;
    std::size_t n   = 0;
    for (const auto& d : est.detection) {
        if (d.cls == cls) {
            acc += d.power;
            ++n;
        }
    }
    return n == 0 ? std::nan("") : acc / static_cast<double>(n);
}

/// One realization's fast-LPM result on the full record grid, FRF per excited harmonic.
struct LpmRealization {
    std::vector<std::size_t> bins;
    std::vector<cplx>        g;
    std::vector<double>      var_noise;
    std::vector<double>      var_total;
    std::vector<unsigned>    flags;
    std::vector<double>      dof;
    std::vector<std::size_t> excluded;
};

inline LpmRealization fast_lpm_realization(const SignalEnsemble& e, std::size_t m, std::span<const std::size_t> ks,
                                           const LpmConfig& cfg) {
    const std::size_t P  = e.periods();
    const double      fs = e.clock_freq();
    const auto        R  = scaled_dft(e.realization(Channel::reference, m), fs);
    const auto        U  = scaled_dft(e.realization(Channel::input, m), fs);
    const auto        Y  = scaled_dft(e.realization(Channel::output, m), fs);

    std::vector<std::size_t> targets;
    targets.reserve(ks.size());
    for (auto k : ks) targets.push_back(k * P);
    std::vector<std::size_t> noise;
    if (P >= 2) {
        for (std::size_t l = 1; l < R.size(); ++l) {
            if (l % P != 0) noise.push_back(l);
        }
    }
    // regression grid: excited bins plus the transient-only bins between them
    std::vector<std::size_t> grid;
    std::merge(targets.begin(), targets.end(), noise.begin(), noise.end(), std::back_inserter(grid));
    const auto     fits = lpm_fit(R, U, Y, cfg, targets, grid, noise);
    LpmRealization out;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        const auto& b = fits[i];
        if (!b.valid()) {
            out.excluded.push_back(ks[i]);
            continue;
        }
        const auto gk = bla_from_reference(b.g_ry, b.g_ru);
        if (!gk) {
            out.excluded.push_back(ks[i]);
            continue;
        }
        unsigned fl = 0;
        if (b.flags & lpm_flag::widened) fl |= bin_flag::widened;
        if (b.flags & lpm_flag::edge) fl |= bin_flag::edge;
        if (b.flags & lpm_flag::noise_alias) fl |= bin_flag::noise_alias;
        out.bins.push_back(ks[i]);
        out.g.push_back(*gk);
        out.var_noise.push_back(ratio_variance(b.noise, *gk, b.g_ru, b.leverage));
        out.var_total.push_back(ratio_variance(b.residual, *gk, b.g_ru, b.leverage));
        out.flags.push_back(fl);
        out.dof.push_back(b.dof);
    }
    return out;
}

/// Fast local polynomial estimate averaged over the M realizations of the ensemble.
/// With M >= 2 the total variance is the spread over realizations, otherwise the fit residual.
inline BlaEstimate bla_fast_lpm(const SignalEnsemble& e, const LpmConfig& cfg = {}) {
    detail::require_channels(e);
    if (!e.has(Channel::reference)) {
        throw ConfigError("fast-lpm needs the reference channel");
    }
    cfg.validate();
    const auto        ks = detail::excited_of(e);
    const std::size_t M  = e.realizations();

    std::vector<LpmRealization> runs;
    runs.reserve(M);
    for (std::size_t m = 0; m < M; ++m) {
        runs.push_back(fast_lpm_realization(e, m, ks, cfg));
    }

    BlaEstimate est;
    est.method   = Method::fast_lpm;
    est.meta     = detail::meta_of(e);
    est.meta.lpm = cfg;
    const double Md = static_cast<double>(M);
    std::vector<std::size_t> cursor(M, 0);
    for (auto k : ks) {
        std::vector<cplx> gs;
        double            vn = 0.0, vt_res = 0.0, dof = 0.0;
        unsigned          fl = 0;
        for (std::size_t m = 0; m < M; ++m) {
            auto& c = cursor[m];
            if (c < runs[m].bins.size() && runs[m].bins[c] == k) {
                gs.push_back(runs[m].g[c]);
                vn += runs[m].var_noise[c];
                vt_res += runs[m].var_total[c];
                dof += runs[m].dof[c];
                fl |= runs[m].flags[c];
                ++c;
            }
        }
        if (gs.size() != M) {
            est.excluded.push_back(k);
            continue;
        }
        cplx mean{0.0, 0.0};
        for (auto v : gs) mean += v;
        mean /= Md;
        double vt   = 0.0;
        double nu_t = 0.0;
        if (M >= 2) {
            for (auto v : gs) vt += std::norm(v - mean);
            vt /= (Md - 1.0) * Md;
            nu_t = Md - 1.0;
        } else {
            vt   = vt_res;
            nu_t = dof;
        }
        est.push(k, static_cast<double>(k) * e.clock_freq() / static_cast<double>(e.n_samples()), mean, vn / (Md * Md),
                 vt, fl, nu_t, Md * static_cast<double>(cfg.dof));
    }
    est.finish();
    return est;
}

inline BlaEstimate estimate(const SignalEnsemble& e, Method method, const LpmConfig& cfg = {}) {
    switch (method) {
    case Method::robust: return bla_robust(e);
    case Method::fast: return bla_fast(e, e.meta.excited);
    case Method::fast_lpm: return bla_fast_lpm(e, cfg);
    }
    throw ConfigError("unknown method");
}

/// Y_S and Y_P at the excited bins of one steady-state period:
///   Y_S = Ycond - G Ucond,   Y_P = (Y - Ycond) - G (U - Ucond)
/// with (Ucond, Ycond) the conditional mean given r.
struct ResidualSplit {
    std::vector<std::size_t> bins;
    std::vector<cplx>        y_s;
    std::vector<cplx>        y_p;
    std::vector<cplx>        r; ///< reference spectrum at the same bins
};

inline ResidualSplit split_residuals(const Spectrum& R, const Spectrum& U, const Spectrum& Y, const Spectrum& Uc,
                                     const Spectrum& Yc, std::span<const std::size_t> bins, std::span<const cplx> g) {
    if (g.size() != bins.size()) {
        throw ConfigError("split_residuals: one BLA value per bin required");
    }
    ResidualSplit out;
    out.bins.assign(bins.begin(), bins.end());
    for (std::size_t i = 0; i < bins.size(); ++i) {
        const std::size_t k = bins[i];
        out.y_s.push_back(Yc.bins[k] - g[i] * Uc.bins[k]);
        out.y_p.push_back((Y.bins[k] - Yc.bins[k]) - g[i] * (U.bins[k] - Uc.bins[k]));
        out.r.push_back(R.bins[k]);
    }
    return out;
}

struct ResidualRequest {
    std::size_t   warmup_periods{2};
    std::size_t   n_mc{100};
    std::uint64_t seed{0};
    std::uint64_t index{0}; ///< which process-noise draw plays the measured realization
};

/// Simulator-backed split for one realization: the measured record uses noise draw `index`,
/// the conditional mean averages n_mc further draws with r frozen.
inline ResidualSplit residual_decomposition(const FeedbackSystemSpec& sys, const ProcessNoiseModel& noise,
                                            std::span<const double> r_period, std::span<const std::size_t> bins,
                                            std::span<const cplx> g, const ResidualRequest& req) {
    const std::size_t N      = r_period.size();
    const std::size_t blocks = req.warmup_periods + 1;
    const auto        r      = repeat_periods(r_period, blocks);
    const auto        src    = draw_process_noise(noise, r.size(), derive_seed(req.seed, Stream::generic, 1), req.index);
    const auto        meas   = simulate_closed_loop(sys, r, src);
    const auto        cond   = conditional_mean_response(sys, r, noise, req.n_mc, derive_seed(req.seed, Stream::generic, 2));
    const auto        last   = [&](const std::vector<double>& x) {
        return scaled_dft(std::span<const double>(x).subspan(req.warmup_periods * N, N));
    };
    return split_residuals(scaled_dft(r_period), last(meas.u), last(meas.y), last(cond.u), last(cond.y), bins, g);
}

/// y(t) - sum_n taps[n] u(t - n): the output residual w.r.t. an FIR BLA.
inline std::vector<double> output_residual(std::span<const double> u, std::span<const double> y,
                                           std::span<const double> taps) {
    if (u.size() != y.size()) {
        throw ConfigError("output_residual: u and y differ in length");
    }
    std::vector<double> out(y.begin(), y.end());
    for (std::size_t t = 0; t < y.size(); ++t) {
        for (std::size_t n = 0; n < taps.size() && n <= t; ++n) {
            out[t] -= taps[n] * u[t - n];
        }
    }
    return out;
}

} // namespace blatk
