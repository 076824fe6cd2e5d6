#pragma once

// Finite-degree Volterra kernels and the closed-loop simulator
//
//   e(t) = r(t) - loop_gain * F[y, w_fb](t)
//   u(t) = A[e, w_act](t)
//   y(t) = P[u, w_pl](t)
//
// Missing actuator/feedback blocks are identities. Each block is a sum of kernels acting on its
// signal input and, for NFIR terms, on its own process-noise input. The loop is evaluated
// explicitly sample by sample, which requires at least one block without lag-0 dependence on
// its signal input.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <blatk/error.hpp>
#include <blatk/random.hpp>
#include <blatk/signals.hpp>

namespace blatk {

enum class TimeDomain { continuous, discrete };

/// coeff * prod_i x(t - signal_lags[i]) * prod_j w(t - noise_lags[j]); no lags = constant term.
struct NfirTerm {
    double                   coeff{0.0};
    std::vector<std::size_t> signal_lags;
    std::vector<std::size_t> noise_lags;

    [[nodiscard]] std::size_t degree() const noexcept { return signal_lags.size() + noise_lags.size(); }
};

/// Sampled kernel on a uniform lag grid; values row-major over `degree` axes of `extent` points.
struct DenseGrid {
    std::size_t         degree{1};
    std::size_t         extent{0};
    double              step{1.0};
    std::vector<double> values;
};

/// gain * prod_i axes[i](tau_i), every axis sampled with the same step.
struct SeparableAxes {
    double                           gain{1.0};
    double                           step{1.0};
    std::vector<std::vector<double>> axes;
};

inline constexpr std::size_t max_dense_deg2_entries = 4096ULL * 4096ULL;

class VolterraKernel {
public:
    using Form = std::variant<std::vector<NfirTerm>, DenseGrid, SeparableAxes>;

    static VolterraKernel nfir(std::vector<NfirTerm> terms) {
        return VolterraKernel(Form{std::move(terms)}, TimeDomain::discrete);
    }

    static VolterraKernel dense(DenseGrid grid, TimeDomain domain = TimeDomain::discrete) {
        if (grid.degree < 1) {
            throw ConfigError("dense kernel: degree must be >= 1");
        }
        std::size_t expected = 1;
        for (std::size_t i = 0; i < grid.degree; ++i) {
            expected *= grid.extent;
        }
        if (grid.values.size() != expected) {
            throw ConfigError("dense kernel: grid size inconsistent with degree and extent");
        }
        if (grid.degree >= 2 && expected > max_dense_deg2_entries) {
            throw ConfigError("dense kernel: grid exceeds 4096x4096 entries, use the separable form");
        }
        if (!(grid.step > 0.0)) {
            throw ConfigError("dense kernel: step must be positive");
        }
        return VolterraKernel(Form{std::move(grid)}, domain);
    }

    /// Degree-1 discrete kernel from its taps.
    static VolterraKernel taps(std::vector<double> h) {
        const std::size_t n = h.size();
        return dense(DenseGrid{1, n, 1.0, std::move(h)});
    }

    static VolterraKernel separable(SeparableAxes s, TimeDomain domain = TimeDomain::discrete) {
        if (s.axes.empty()) {
            throw ConfigError("separable kernel: need at least one axis");
        }
        if (!(s.step > 0.0)) {
            throw ConfigError("separable kernel: step must be positive");
        }
        return VolterraKernel(Form{std::move(s)}, domain);
    }

    [[nodiscard]] const Form& form() const noexcept { return form_; }
    [[nodiscard]] TimeDomain  domain() const noexcept { return domain_; }

    /// Highest total degree (signal plus noise factors).
    [[nodiscard]] std::size_t degree() const {
        return std::visit(
            [](const auto& f) -> std::size_t {
                using T = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<T, std::vector<NfirTerm>>) {
                    std::size_t d = 0;
                    for (const auto& t : f) d = std::max(d, t.degree());
                    return d;
                } else if constexpr (std::is_same_v<T, DenseGrid>) {
                    return f.degree;
                } else {
                    return f.axes.size();
                }
            },
            form_);
    }

    /// True if the output at t depends on the signal input at t.
    [[nodiscard]] bool has_direct_feedthrough() const {
        return std::visit(
            [](const auto& f) -> bool {
                using T = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<T, std::vector<NfirTerm>>) {
                    return std::any_of(f.begin(), f.end(), [](const NfirTerm& t) {
                        return t.coeff != 0.0 &&
                               std::find(t.signal_lags.begin(), t.signal_lags.end(), 0U) != t.signal_lags.end();
                    });
                } else if constexpr (std::is_same_v<T, DenseGrid>) {
                    // any nonzero entry with a zero index on some axis
                    const std::size_t total = f.values.size();
                    for (std::size_t idx = 0; idx < total; ++idx) {
                        if (f.values[idx] == 0.0) continue;
                        std::size_t rest = idx;
                        for (std::size_t a = 0; a < f.degree; ++a) {
                            if (rest % f.extent == 0) return true;
                            rest /= f.extent;
                        }
                    }
                    return false;
                } else {
                    if (f.gain == 0.0) return false;
                    return std::any_of(f.axes.begin(), f.axes.end(),
                                       [](const std::vector<double>& ax) { return !ax.empty() && ax[0] != 0.0; });
                }
            },
            form_);
    }

    /// Output at sample t; x and w before t = 0 are zero. An empty w means w == 0.
    [[nodiscard]] double evaluate_at(std::size_t t, std::span<const double> x, std::span<const double> w) const {
        if (domain_ != TimeDomain::discrete) {
            throw ConfigError("discretize first");
        }
        const auto at = [t](std::span<const double> s, std::size_t lag) -> double {
            return (lag <= t && t - lag < s.size()) ? s[t - lag] : 0.0;
        };
        return std::visit(
            [&](const auto& f) -> double {
                using T = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<T, std::vector<NfirTerm>>) {
                    double y = 0.0;
                    for (const auto& term : f) {
                        double v = term.coeff;
                        for (auto lag : term.signal_lags) v = v * at(x, lag);
                        for (auto lag : term.noise_lags) v = v * at(w, lag);
                        y += v;
                    }
                    return y;
                } else if constexpr (std::is_same_v<T, DenseGrid>) {
                    const std::size_t L = f.extent;
                    if (f.degree == 1) {
                        double y = 0.0;
                        for (std::size_t n = 0; n < L && n <= t; ++n) y += f.values[n] * at(x, n);
                        return y;
                    }
                    if (f.degree == 2) {
                        double y = 0.0;
                        for (std::size_t n1 = 0; n1 < L && n1 <= t; ++n1) {
                            const double x1 = at(x, n1);
                            if (x1 == 0.0) continue;
                            double inner = 0.0;
                            for (std::size_t n2 = 0; n2 < L && n2 <= t; ++n2) inner += f.values[n1 * L + n2] * at(x, n2);
                            y += x1 * inner;
                        }
                        return y;
                    }
                    // general degree: odometer over all index tuples
                    std::vector<std::size_t> idx(f.degree, 0);
                    double                   y = 0.0;
                    for (std::size_t flat = 0; flat < f.values.size(); ++flat) {
                        double v = f.values[flat];
                        if (v != 0.0) {
                            for (std::size_t a = 0; a < f.degree && v != 0.0; ++a) v *= at(x, idx[a]);
                            y += v;
                        }
                        for (std::size_t a = f.degree; a-- > 0;) {
                            if (++idx[a] < L) break;
                            idx[a] = 0;
                        }
                    }
                    return y;
                } else {
                    double y = f.gain;
                    for (const auto& ax : f.axes) {
                        double acc = 0.0;
                        for (std::size_t n = 0; n < ax.size() && n <= t; ++n) acc += ax[n] * at(x, n);
                        y *= acc;
                    }
                    return y;
                }
            },
            form_);
    }

private:
    VolterraKernel(Form f, TimeDomain d) : form_(std::move(f)), domain_(d) {}

    Form       form_;
    TimeDomain domain_;
};

using KernelSet = std::vector<VolterraKernel>;

inline double evaluate_set_at(const KernelSet& set, std::size_t t, std::span<const double> x,
                              std::span<const double> w) {
    double y = 0.0;
    for (const auto& k : set) {
        y += k.evaluate_at(t, x, w);
    }
    return y;
}

inline bool set_has_feedthrough(const KernelSet& set) {
    return std::any_of(set.begin(), set.end(), [](const VolterraKernel& k) { return k.has_direct_feedthrough(); });
}

/// Open-loop evaluation of a kernel set on a whole record (zero pre-history).
inline std::vector<double> eval_volterra_dt(const KernelSet& kernels, std::span<const double> x,
                                            std::span<const double> w = {}) {
    for (const auto& k : kernels) {
        if (k.domain() != TimeDomain::discrete) {
            throw ConfigError("discretize first");
        }
    }
    std::vector<double> y(x.size());
    for (std::size_t t = 0; t < x.size(); ++t) {
        y[t] = evaluate_set_at(kernels, t, x, w);
    }
    return y;
}

struct FeedbackSystemSpec {
    std::string              name;
    std::optional<KernelSet> actuator;
    KernelSet                plant;
    std::optional<KernelSet> feedback;
    double                   loop_gain{0.0};

    [[nodiscard]] bool closed() const noexcept { return loop_gain != 0.0; }

    /// Throws when the loop has a direct feed-through path.
    void validate() const {
        if (plant.empty()) {
            throw ConfigError("system: plant has no kernels");
        }
        const auto check_domain = [](const KernelSet& s) {
            for (const auto& k : s) {
                if (k.domain() != TimeDomain::discrete) throw ConfigError("discretize first");
            }
        };
        check_domain(plant);
        if (actuator) check_domain(*actuator);
        if (feedback) check_domain(*feedback);
        if (!std::isfinite(loop_gain)) {
            throw ConfigError("system: loop gain must be finite");
        }
        if (closed() && !has_loop_delay()) {
            throw ConfigError("system: direct feed-through around the loop; at least one block needs a one-sample delay");
        }
    }

    [[nodiscard]] bool plant_delayed() const { return !set_has_feedthrough(plant); }
    [[nodiscard]] bool actuator_delayed() const { return actuator && !set_has_feedthrough(*actuator); }
    [[nodiscard]] bool feedback_delayed() const { return feedback && !set_has_feedthrough(*feedback); }
    [[nodiscard]] bool has_loop_delay() const { return plant_delayed() || actuator_delayed() || feedback_delayed(); }
};

/// Process-noise records per block; empty records mean zero noise.
struct NoiseSources {
    std::vector<double> plant;
    std::vector<double> actuator;
    std::vector<double> feedback;
};

struct LoopResponse {
    std::vector<double> u;
    std::vector<double> y;
};

inline constexpr double divergence_threshold = 1e12;

namespace detail {

[[noreturn]] inline void report_divergence(std::size_t t) {
    throw NumericError("loop diverged at sample " + std::to_string(t), t);
}

inline void check_bounded(double u, double y, std::size_t t) {
    if (!(std::abs(u) <= divergence_threshold) || !std::isfinite(y)) {
        report_divergence(t);
    }
}

} // namespace detail

/// y(t) = u(t-1) + u(t-2) w(t)^2,  u(t) = r(t) - alpha y(t), zero initial conditions.
inline LoopResponse simulate_nfir_feedback(double alpha, std::span<const double> r, std::span<const double> w) {
    if (r.size() != w.size()) {
        throw ConfigError("simulate_nfir_feedback: r and w must have equal length");
    }
    if (!std::isfinite(alpha)) {
        throw ConfigError("simulate_nfir_feedback: alpha must be finite");
    }
    const std::size_t n = r.size();
    LoopResponse      out{std::vector<double>(n), std::vector<double>(n)};
    auto&             u = out.u;
    auto&             y = out.y;
    for (std::size_t t = 0; t < n; ++t) {
        const double u1 = t >= 1 ? u[t - 1] : 0.0;
        const double u2 = t >= 2 ? u[t - 2] : 0.0;
        y[t]            = u1 + u2 * w[t] * w[t];
        u[t]            = r[t] - alpha * y[t];
        detail::check_bounded(u[t], y[t], t);
    }
    return out;
}

/// NFIR benchmark as a general loop: plant taps {u(t-1)} + {u(t-2) w(t) w(t)}, feedback gain alpha.
inline FeedbackSystemSpec paper_nfir(double alpha) {
    FeedbackSystemSpec s;
    s.name      = "paper-nfir";
    s.plant     = {VolterraKernel::nfir({NfirTerm{1.0, {1}, {}}, NfirTerm{1.0, {2}, {0, 0}}})};
    s.loop_gain = alpha;
    return s;
}

inline LoopResponse simulate_closed_loop(const FeedbackSystemSpec& sys, std::span<const double> r,
                                         const NoiseSources& noises = {}) {
    sys.validate();
    const std::size_t n = r.size();
    const auto        check_len = [n](const std::vector<double>& w, const char* what) {
        if (!w.empty() && w.size() != n) {
            throw ConfigError(std::string("simulate_closed_loop: ") + what + " noise length differs from r");
        }
    };
    check_len(noises.plant, "plant");
    check_len(noises.actuator, "actuator");
    check_len(noises.feedback, "feedback");

    LoopResponse        out{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    std::vector<double> e(n, 0.0), f(n, 0.0);
    auto&               u = out.u;
    auto&               y = out.y;

    const auto plant_at = [&](std::size_t t) { y[t] = evaluate_set_at(sys.plant, t, u, noises.plant); };
    const auto feedback_at = [&](std::size_t t) {
        f[t] = sys.feedback ? evaluate_set_at(*sys.feedback, t, y, noises.feedback) : y[t];
    };
    const auto error_at    = [&](std::size_t t) { e[t] = sys.closed() ? r[t] - sys.loop_gain * f[t] : r[t]; };
    const auto actuator_at = [&](std::size_t t) {
        u[t] = sys.actuator ? evaluate_set_at(*sys.actuator, t, e, noises.actuator) : e[t];
    };

    // Start each step at a block whose output only needs past inputs.
    enum class Start { error, plant, feedback, actuator };
    Start start = Start::error;
    if (sys.closed()) {
        start = sys.plant_delayed() ? Start::plant : sys.feedback_delayed() ? Start::feedback : Start::actuator;
    }
    for (std::size_t t = 0; t < n; ++t) {
        switch (start) {
        case Start::error: // open loop
            error_at(t);
            actuator_at(t);
            plant_at(t);
            break;
        case Start::plant:
            plant_at(t);
            feedback_at(t);
            error_at(t);
            actuator_at(t);
            break;
        case Start::feedback:
            feedback_at(t);
            error_at(t);
            actuator_at(t);
            plant_at(t);
            break;
        case Start::actuator:
            actuator_at(t);
            plant_at(t);
            feedback_at(t);
            error_at(t);
            break;
        }
        detail::check_bounded(u[t], y[t], t);
    }
    return out;
}

/// Standard deviations (and optional shaping) of the process-noise sources; seeds are ignored,
/// draws come from the seed passed to the consumer.
struct ProcessNoiseModel {
    std::optional<NoiseSpec> plant;
    std::optional<NoiseSpec> actuator;
    std::optional<NoiseSpec> feedback;
};

/// Draws one set of process-noise records of length n for realization `index`.
inline NoiseSources draw_process_noise(const ProcessNoiseModel& model, std::size_t n, std::uint64_t seed,
                                       std::uint64_t index) {
    NoiseSources out;
    const auto   draw = [&](const std::optional<NoiseSpec>& spec, Stream stream) -> std::vector<double> {
        if (!spec || spec->std_dev == 0.0) {
            return {};
        }
        NoiseSpec s = *spec;
        s.seed      = seed;
        return gaussian_noise(n, s, stream, index);
    };
    out.plant    = draw(model.plant, Stream::plant_noise);
    out.actuator = draw(model.actuator, Stream::actuator_noise);
    out.feedback = draw(model.feedback, Stream::feedback_noise);
    return out;
}

/// Monte-Carlo estimate of (E{u | r}, E{y | r}) over n_mc independent process-noise draws.
inline LoopResponse conditional_mean_response(const FeedbackSystemSpec& sys, std::span<const double> r,
                                              const ProcessNoiseModel& noise, std::size_t n_mc, std::uint64_t seed) {
    if (n_mc < 2) {
        throw ConfigError("conditional_mean_response: need n_mc >= 2");
    }
    const std::size_t n = r.size();
    LoopResponse      mean{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    const std::uint64_t mc_seed = derive_seed(seed, Stream::monte_carlo);
    for (std::size_t i = 0; i < n_mc; ++i) {
        const auto sources = draw_process_noise(noise, n, mc_seed, i);
        const auto resp    = simulate_closed_loop(sys, r, sources);
        for (std::size_t t = 0; t < n; ++t) {
            mean.u[t] += resp.u[t];
            mean.y[t] += resp.y[t];
        }
    }
    const double inv = 1.0 / static_cast<double>(n_mc);
    for (std::size_t t = 0; t < n; ++t) {
        mean.u[t] *= inv;
        mean.y[t] *= inv;
    }
    return mean;
}

/// Repeats one period `count` times.
inline std::vector<double> repeat_periods(std::span<const double> period, std::size_t count) {
    std::vector<double> out;
    out.reserve(period.size() * count);
    for (std::size_t i = 0; i < count; ++i) {
        out.insert(out.end(), period.begin(), period.end());
    }
    return out;
}

} // namespace blatk
