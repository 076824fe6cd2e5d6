#pragma once

// Ensemble generation: M realizations of the excitation driven through a system, with
// process noise inside the loop and measurement noise added to the recorded u and y.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <blatk/error.hpp>
#include <blatk/random.hpp>
#include <blatk/signals.hpp>
#include <blatk/spectra.hpp>
#include <blatk/volterra.hpp>

namespace blatk {

enum class Excitation { multisine, periodic_noise };

struct RunSpec {
    MultisineSpec      signal;
    Excitation         excitation{Excitation::multisine};
    FeedbackSystemSpec system;
    ProcessNoiseModel  process;
    double             noise_u{0.0}; ///< measurement noise std on u
    double             noise_y{0.0}; ///< measurement noise std on y
    std::size_t        realizations{1};
    std::size_t        periods{2};
    std::size_t        warmup_periods{2};
    std::uint64_t      seed{0};
};

/// Reference period of realization m.
inline std::vector<double> reference_period(const RunSpec& s, std::size_t m) {
    const auto seed = derive_seed(s.seed, Stream::reference, m);
    return s.excitation == Excitation::multisine ? realize_multisine(s.signal, seed).samples
                                                 : realize_periodic_noise(s.signal, seed).samples;
}

/// M reference periods as a one-period ensemble (reference channel only).
inline SignalEnsemble generate_references(const RunSpec& s) {
    s.signal.validate();
    if (s.realizations < 1) {
        throw ConfigError("run: need M >= 1");
    }
    const std::size_t   N = s.signal.n_samples;
    SignalEnsemble      e(s.realizations, 1, N, s.signal.clock_freq);
    std::vector<double> rr;
    rr.reserve(s.realizations * N);
    for (std::size_t m = 0; m < s.realizations; ++m) {
        const auto r = reference_period(s, m);
        rr.insert(rr.end(), r.begin(), r.end());
    }
    e.set_channel(Channel::reference, std::move(rr));
    e.meta.seed    = s.seed;
    e.meta.excited = s.signal.excited;
    return e;
}

/// Drives period 0 of every reference realization through s.system over warm-up + P periods and
/// keeps the last P. s.signal and s.realizations are not used; they come from `refs`.
inline SignalEnsemble simulate_references(const RunSpec& s, const SignalEnsemble& refs) {
    s.system.validate();
    if (s.periods < 1) {
        throw ConfigError("run: need P >= 1");
    }
    if (!(s.noise_u >= 0.0) || !(s.noise_y >= 0.0)) {
        throw ConfigError("run: measurement noise std must be non-negative");
    }
    if (!refs.has(Channel::reference)) {
        throw ConfigError("run: ensemble has no reference channel");
    }
    const std::size_t M     = refs.realizations();
    const std::size_t N     = refs.n_samples();
    const std::size_t total = (s.warmup_periods + s.periods) * N;
    const std::size_t keep  = s.periods * N;
    const std::size_t skip  = total - keep;

    SignalEnsemble      e(M, s.periods, N, refs.clock_freq());
    std::vector<double> rr, uu, yy;
    rr.reserve(M * keep);
    uu.reserve(M * keep);
    yy.reserve(M * keep);
    for (std::size_t m = 0; m < M; ++m) {
        const auto r    = repeat_periods(refs.period(Channel::reference, m, 0), s.warmup_periods + s.periods);
        const auto src  = draw_process_noise(s.process, total, s.seed, m);
        const auto resp = simulate_closed_loop(s.system, r, src);
        std::vector<double> nu(keep, 0.0), ny(keep, 0.0);
        if (s.noise_u > 0.0) nu = gaussian_noise(keep, NoiseSpec{s.noise_u, std::nullopt, s.seed}, Stream::measurement_u, m);
        if (s.noise_y > 0.0) ny = gaussian_noise(keep, NoiseSpec{s.noise_y, std::nullopt, s.seed}, Stream::measurement_y, m);
        for (std::size_t t = 0; t < keep; ++t) {
            rr.push_back(r[skip + t]);
            uu.push_back(resp.u[skip + t] + nu[t]);
            yy.push_back(resp.y[skip + t] + ny[t]);
        }
    }
    e.set_channel(Channel::reference, std::move(rr));
    e.set_channel(Channel::input, std::move(uu));
    e.set_channel(Channel::output, std::move(yy));
    e.meta         = refs.meta;
    e.meta.seed    = s.seed;
    e.meta.system  = s.system.name;
    return e;
}

/// generate_references followed by simulate_references.
inline SignalEnsemble run_ensemble(const RunSpec& s) {
    if (s.realizations < 1 || s.periods < 1) {
        throw ConfigError("run: need M >= 1 and P >= 1");
    }
    return simulate_references(s, generate_references(s));
}

/// Plant noise only, white with the given std: the usual single-source setting.
inline ProcessNoiseModel plant_noise(double sigma) {
    ProcessNoiseModel p;
    if (sigma > 0.0) p.plant = NoiseSpec{sigma, std::nullopt, 0};
    return p;
}

/// Static open-loop polynomial y = sum_i c_i u(t)^(i+1).
inline FeedbackSystemSpec static_polynomial(std::string name, std::span<const double> coeffs) {
    std::vector<NfirTerm> terms;
    for (std::size_t i = 0; i < coeffs.size(); ++i) {
        if (coeffs[i] != 0.0) terms.push_back({coeffs[i], std::vector<std::size_t>(i + 1, 0), {}});
    }
    FeedbackSystemSpec s;
    s.name  = std::move(name);
    s.plant = {VolterraKernel::nfir(std::move(terms))};
    return s;
}

/// Open-loop FIR y(t) = sum_n h[n] u(t-n).
inline FeedbackSystemSpec fir_system(std::string name, std::vector<double> h) {
    FeedbackSystemSpec s;
    s.name  = std::move(name);
    s.plant = {VolterraKernel::taps(std::move(h))};
    return s;
}

} // namespace blatk
