#pragma once

// Type I / Type II classification from BLA estimates taken at different reference powers.
//
//   BLA changes?                 yes -> Type I        no -> undecided
//   var_nl changes?              yes -> Type I        no -> not Type I (BLA unchanged too)
//   var_noise ~ 1/(ref. power)?  yes -> not Type II   no -> Type II
//
// Per-bin tests are aggregated by a majority vote weighted with |G|.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <fmt/format.h>

#include <blatk/bla.hpp>
#include <blatk/error.hpp>

namespace blatk {

struct Experiment {
    BlaEstimate estimate;
    double      reference_power{0.0}; ///< defaults to estimate.meta.reference_power when 0
    std::string label;
};

struct ExperimentSet {
    std::vector<Experiment> experiments;

    void add(BlaEstimate est, std::string label = {}) {
        const double p = est.meta.reference_power;
        experiments.push_back({std::move(est), p, std::move(label)});
    }
};

enum class TypeI { yes, no, undecided };

inline const char* type_i_name(TypeI t) {
    switch (t) {
    case TypeI::yes: return "yes";
    case TypeI::no: return "no";
    case TypeI::undecided: return "undecided";
    }
    return "?";
}

struct Verdict {
    bool   value{false};
    double score{0.0}; ///< |G|-weighted fraction of bins voting yes
};

struct BinDetection {
    std::size_t k{0};
    double      weight{0.0};
    double      z_bla{0.0};
    double      z_nl{0.0};
    bool        noise_evaluable{false};
    double      slope{0.0};
    double      slope_se{0.0};
    bool        bla_changed{false};
    bool        nl_changed{false};
    bool        inverse_power{false};
};

struct DetectionReport {
    Verdict             bla_changed;
    Verdict             var_nl_changed;
    Verdict             var_noise_inverse_power;
    bool                noise_evaluable{false};
    std::vector<double> nl_present_score; ///< per experiment
    std::vector<bool>   nl_present;
    TypeI               type_i{TypeI::undecided};
    bool                type_ii{false};
    bool                linear_consistent{true};
    double              z_threshold{3.0};
    double              slope_band{1.96};
    std::vector<double> powers;
    std::vector<BinDetection> bins;
};

namespace detail {

/// Standard error of var_total - var_noise from the dof of each variance.
inline double nl_se2(double vt, double nu_t, double vn, double nu_n) {
    return vt * vt / std::max(nu_t, 1.0) + vn * vn / std::max(nu_n, 1.0);
}

inline double weighted_fraction(const std::vector<BinDetection>& bins, bool BinDetection::*field, bool evaluable_only) {
    double yes = 0.0, total = 0.0;
    for (const auto& b : bins) {
        if (evaluable_only && !b.noise_evaluable) continue;
        total += b.weight;
        if (b.*field) yes += b.weight;
    }
    return total > 0.0 ? yes / total : 0.0;
}

/// Noise variance this small against |G|^2 means no noise at all; the power law is not testable.
inline constexpr double noise_floor_rel = 1e-20;

} // namespace detail

inline DetectionReport classify_nonlinearity(const ExperimentSet& xs, double z_threshold = 3.0) {
    if (!(z_threshold > 0.0)) {
        throw ConfigError("detect: threshold must be positive");
    }
    const auto& ex = xs.experiments;
    std::vector<double> powers;
    for (const auto& e : ex) {
        const double p = e.reference_power > 0.0 ? e.reference_power : e.estimate.meta.reference_power;
        if (!(p > 0.0)) {
            throw ConfigError("detect: every experiment needs a positive reference power");
        }
        powers.push_back(p);
    }
    {
        auto sorted = powers;
        std::sort(sorted.begin(), sorted.end());
        const bool distinct = !sorted.empty() && sorted.back() > sorted.front() * (1.0 + 1e-9);
        if (ex.size() < 2 || !distinct) {
            throw ConfigError("need >=2 powers");
        }
    }
    // common bins
    std::vector<std::size_t> common = ex[0].estimate.bins;
    for (std::size_t i = 1; i < ex.size(); ++i) {
        std::vector<std::size_t> next;
        std::set_intersection(common.begin(), common.end(), ex[i].estimate.bins.begin(), ex[i].estimate.bins.end(),
                              std::back_inserter(next));
        common = std::move(next);
    }
    if (common.empty()) {
        throw ConfigError("detect: experiments share no excited bins");
    }

    DetectionReport rep;
    rep.z_threshold = z_threshold;
    rep.powers      = powers;
    const std::size_t X = ex.size();
    std::vector<std::vector<std::size_t>> at(X);
    for (std::size_t i = 0; i < X; ++i) {
        const auto& b = ex[i].estimate.bins;
        for (auto k : common) {
            at[i].push_back(static_cast<std::size_t>(std::lower_bound(b.begin(), b.end(), k) - b.begin()));
        }
    }
    std::vector<double> nl_yes(X, 0.0);
    double              weight_sum = 0.0;

    for (std::size_t c = 0; c < common.size(); ++c) {
        BinDetection d;
        d.k = common[c];
        for (std::size_t i = 0; i < X; ++i) d.weight += std::abs(ex[i].estimate.g[at[i][c]]);
        d.weight /= static_cast<double>(X);
        weight_sum += d.weight;

        for (std::size_t i = 0; i < X; ++i) {
            const auto&  a  = ex[i].estimate;
            const auto   ia = at[i][c];
            for (std::size_t j = i + 1; j < X; ++j) {
                const auto&  b   = ex[j].estimate;
                const auto   ib  = at[j][c];
                const double vg  = a.var_total[ia] + b.var_total[ib];
                const double dg  = std::abs(a.g[ia] - b.g[ib]);
                const double zb  = vg > 0.0 ? dg / std::sqrt(vg) : (dg > 0.0 ? HUGE_VAL : 0.0);
                const double se2 = detail::nl_se2(a.var_total[ia], a.dof_total[ia], a.var_noise[ia], a.dof_noise[ia]) +
                                   detail::nl_se2(b.var_total[ib], b.dof_total[ib], b.var_noise[ib], b.dof_noise[ib]);
                const double dn  = std::abs(a.var_nl[ia] - b.var_nl[ib]);
                const double zn  = se2 > 0.0 ? dn / std::sqrt(se2) : (dn > 0.0 ? HUGE_VAL : 0.0);
                d.z_bla          = std::max(d.z_bla, zb);
                d.z_nl           = std::max(d.z_nl, zn);
            }
            const double se = std::sqrt(detail::nl_se2(a.var_total[ia], a.dof_total[ia], a.var_noise[ia], a.dof_noise[ia]));
            const double ex_nl = a.var_total[ia] - a.var_noise[ia];
            if (ex_nl > 0.0 && (se == 0.0 || ex_nl / se > z_threshold)) nl_yes[i] += d.weight;
        }
        d.bla_changed = d.z_bla > z_threshold;
        d.nl_changed  = d.z_nl > z_threshold;

        // weighted least squares of log var_noise on log power; var(log v) ~ 1/dof
        d.noise_evaluable = true;
        double sw = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
        for (std::size_t i = 0; i < X; ++i) {
            const auto&  a  = ex[i].estimate;
            const auto   ia = at[i][c];
            const double vn = a.var_noise[ia];
            if (!(vn > detail::noise_floor_rel * std::norm(a.g[ia])) || !(vn > 0.0)) {
                d.noise_evaluable = false;
                break;
            }
            const double w = std::max(a.dof_noise[ia], 1.0);
            const double x = std::log(powers[i]);
            const double y = std::log(vn);
            sw += w;
            sx += w * x;
            sy += w * y;
            sxx += w * x * x;
            sxy += w * x * y;
        }
        if (d.noise_evaluable) {
            const double det = sw * sxx - sx * sx;
            if (det > 0.0) {
                d.slope         = (sw * sxy - sx * sy) / det;
                d.slope_se      = std::sqrt(sw / det);
                d.inverse_power = std::abs(d.slope + 1.0) <= rep.slope_band * d.slope_se;
            } else {
                d.noise_evaluable = false;
            }
        }
        rep.bins.push_back(d);
    }

    const auto vote = [](double score) { return Verdict{score > 0.5, score}; };
    rep.bla_changed    = vote(detail::weighted_fraction(rep.bins, &BinDetection::bla_changed, false));
    rep.var_nl_changed = vote(detail::weighted_fraction(rep.bins, &BinDetection::nl_changed, false));

    double evaluable_weight = 0.0;
    for (const auto& b : rep.bins) {
        if (b.noise_evaluable) evaluable_weight += b.weight;
    }
    rep.noise_evaluable         = evaluable_weight > 0.5 * weight_sum;
    rep.var_noise_inverse_power = vote(detail::weighted_fraction(rep.bins, &BinDetection::inverse_power, true));
    // without measurable noise there is no process noise either
    rep.type_ii = rep.noise_evaluable && !rep.var_noise_inverse_power.value;

    bool any_nl = false;
    for (std::size_t i = 0; i < X; ++i) {
        const double s = weight_sum > 0.0 ? nl_yes[i] / weight_sum : 0.0;
        rep.nl_present_score.push_back(s);
        rep.nl_present.push_back(s > 0.5);
        any_nl = any_nl || s > 0.5;
    }

    if (rep.bla_changed.value || rep.var_nl_changed.value) {
        rep.type_i = TypeI::yes;
    } else if (rep.type_ii && !any_nl) {
        // process noise can hide the distortion of a Type I contribution
        rep.type_i = TypeI::undecided;
    } else {
        rep.type_i = TypeI::no;
    }
    rep.linear_consistent = !any_nl && rep.type_i != TypeI::yes && !rep.type_ii;
    return rep;
}

/// Two estimates at the same reference power but different process-noise levels: a BLA shift
/// beyond the threshold can only come from an input / process-noise interaction.
inline Verdict process_noise_shift(const BlaEstimate& a, const BlaEstimate& b, double z_threshold = 3.0) {
    double yes = 0.0, total = 0.0;
    std::size_t j = 0;
    for (std::size_t i = 0; i < a.bins.size(); ++i) {
        while (j < b.bins.size() && b.bins[j] < a.bins[i]) ++j;
        if (j == b.bins.size() || b.bins[j] != a.bins[i]) continue;
        const double w  = 0.5 * (std::abs(a.g[i]) + std::abs(b.g[j]));
        const double vg = a.var_total[i] + b.var_total[j];
        const double dg = std::abs(a.g[i] - b.g[j]);
        total += w;
        if (vg > 0.0 ? dg / std::sqrt(vg) > z_threshold : dg > 0.0) yes += w;
    }
    if (total == 0.0) {
        throw ConfigError("detect: estimates share no excited bins");
    }
    return {yes / total > 0.5, yes / total};
}

/// Plain-text table in the layout of the classification rules.
inline std::string render_report(const DetectionReport& r) {
    std::string s;
    s += fmt::format("reference powers:");
    for (double p : r.powers) s += fmt::format(" {:.6g}", p);
    s += fmt::format("\nthreshold z = {:g}, slope band = {:g} SE\n\n", r.z_threshold, r.slope_band);
    s += fmt::format("{:<34}{:<10}{:<10}{}\n", "test", "result", "score", "implies");
    s += fmt::format("{:<34}{:<10}{:<10.3f}{}\n", "BLA changes?", r.bla_changed.value ? "yes" : "no", r.bla_changed.score,
                     r.bla_changed.value ? "Type I" : "undecided");
    s += fmt::format("{:<34}{:<10}{:<10.3f}{}\n", "var_nl changes?", r.var_nl_changed.value ? "yes" : "no",
                     r.var_nl_changed.score, r.var_nl_changed.value ? "Type I" : "not Type I");
    s += fmt::format("{:<34}{:<10}{:<10.3f}{}\n", "var_noise ~ 1/reference power?",
                     !r.noise_evaluable ? "n/a" : r.var_noise_inverse_power.value ? "yes" : "no",
                     r.var_noise_inverse_power.score,
                     r.type_ii ? "Type II" : "not Type II");
    s += fmt::format("\nType I: {}\nType II: {}\nlinear hypothesis: {}\n", type_i_name(r.type_i), r.type_ii ? "yes" : "no",
                     r.linear_consistent ? "consistent" : "rejected");
    return s;
}

} // namespace blatk
