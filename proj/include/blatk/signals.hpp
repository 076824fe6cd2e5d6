#pragma once

// Periodic excitations (random phase multisines, periodic noise) and Gaussian noise sources.
//
// Amplitude convention: amp_grid[k] is the magnitude of the sqrt(N)-scaled DFT bin k of one
// signal period, so a realized multisine has |X(k)| == amp_grid[k] at every excited bin and
// variance (2/N) * sum_k amp_grid[k]^2. DC is carried separately by dc_value.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <blatk/error.hpp>
#include <blatk/fft.hpp>
#include <blatk/random.hpp>

namespace blatk {

enum class PhaseLaw {
    uniform_random,
    deterministic_debug, ///< all phases zero; for unit tests only
};

enum class HarmonicGrid {
    full,       ///< every harmonic in the band
    odd,        ///< odd harmonics only
    odd_random, ///< odd harmonics, one per group of consecutive odd harmonics left out at random
};

struct MultisineSpec {
    std::size_t              n_samples{0};
    double                   clock_freq{1.0};
    std::vector<double>      amp_grid; ///< size n_samples/2, index k = harmonic
    std::vector<std::size_t> excited;  ///< ascending, exactly the k >= 1 with amp_grid[k] > 0
    double                   dc_value{0.0};
    PhaseLaw                 phase_law{PhaseLaw::uniform_random};

    [[nodiscard]] double bin_frequency(std::size_t k) const {
        return static_cast<double>(k) * clock_freq / static_cast<double>(n_samples);
    }

    void validate() const {
        if (n_samples < 4 || n_samples % 2 != 0) {
            throw ConfigError("multisine: n_samples must be even and >= 4");
        }
        if (!(clock_freq > 0.0) || !std::isfinite(clock_freq)) {
            throw ConfigError("multisine: clock frequency must be positive");
        }
        if (amp_grid.size() != n_samples / 2) {
            throw ConfigError("multisine: amp_grid must hold n_samples/2 entries");
        }
        if (amp_grid[0] != 0.0) {
            throw ConfigError("multisine: amp_grid[0] must be zero, DC is set by dc_value");
        }
        if (!std::isfinite(dc_value)) {
            throw ConfigError("multisine: dc_value must be finite");
        }
        std::vector<std::size_t> expected;
        for (std::size_t k = 1; k < amp_grid.size(); ++k) {
            const double a = amp_grid[k];
            if (!(a >= 0.0) || !std::isfinite(a)) {
                throw ConfigError("multisine: amplitudes must be finite and non-negative");
            }
            if (a > 0.0) {
                expected.push_back(k);
            }
        }
        if (expected != excited) {
            throw ConfigError("multisine: excited set does not match the non-zero amplitudes");
        }
    }
};

/// Builds a spec from an amplitude table and derives the excited set from it.
inline MultisineSpec make_multisine_spec(std::size_t n_samples, double clock_freq, std::vector<double> amp_grid,
                                         double dc = 0.0, PhaseLaw law = PhaseLaw::uniform_random) {
    MultisineSpec spec;
    spec.n_samples  = n_samples;
    spec.clock_freq = clock_freq;
    spec.amp_grid   = std::move(amp_grid);
    spec.dc_value   = dc;
    spec.phase_law  = law;
    for (std::size_t k = 1; k < spec.amp_grid.size(); ++k) {
        if (spec.amp_grid[k] > 0.0) {
            spec.excited.push_back(k);
        }
    }
    spec.validate();
    return spec;
}

struct PeriodicSignal {
    std::vector<double> samples;
    MultisineSpec       spec;
    std::uint64_t       seed{0};
};

/// Discrete-time LTI shaping filter b(q)/a(q) with a[0] == 1.
struct ShapingFilter {
    std::vector<double> b;
    std::vector<double> a;
};

struct NoiseSpec {
    double                       std_dev{0.0};
    std::optional<ShapingFilter> shaping;
    std::uint64_t                seed{0};
};

namespace detail {

/// Harmonics k in [1, N/2-1] whose frequency lies in [f_lo, f_hi].
inline std::vector<std::size_t> band_harmonics(std::size_t n, double fs, double f_lo, double f_hi) {
    const double             nd = static_cast<double>(n);
    // A small tolerance keeps band edges given as k*fs/N on their own harmonic.
    const double             tol = 1e-9;
    const auto               lo  = static_cast<long long>(std::ceil(nd * f_lo / fs - tol));
    const auto               hi  = static_cast<long long>(std::floor(nd * f_hi / fs + tol));
    std::vector<std::size_t> ks;
    for (long long k = std::max(1LL, lo); k <= std::min(hi, static_cast<long long>(n / 2) - 1); ++k) {
        ks.push_back(static_cast<std::size_t>(k));
    }
    return ks;
}

inline std::vector<std::size_t> select_grid(const std::vector<std::size_t>& band, HarmonicGrid grid, std::size_t group,
                                            std::uint64_t seed) {
    if (grid == HarmonicGrid::full) {
        return band;
    }
    std::vector<std::size_t> odd;
    std::copy_if(band.begin(), band.end(), std::back_inserter(odd), [](std::size_t k) { return k % 2 == 1; });
    if (grid == HarmonicGrid::odd) {
        return odd;
    }
    if (group < 2) {
        throw ConfigError("random harmonic grid: group size must be >= 2");
    }
    Rng                      rng(derive_seed(seed, Stream::grid));
    std::vector<std::size_t> kept;
    for (std::size_t start = 0; start < odd.size(); start += group) {
        const std::size_t len  = std::min(group, odd.size() - start);
        const std::size_t drop = len == group ? static_cast<std::size_t>(rng.uniform() * static_cast<double>(len)) : len;
        for (std::size_t i = 0; i < len; ++i) {
            if (i != drop) {
                kept.push_back(odd[start + i]);
            }
        }
    }
    return kept;
}

} // namespace detail

/// Equal-amplitude multisine over a band, on the chosen harmonic grid, normalized so that the
/// variance of one realized period is exactly target_std^2.
inline MultisineSpec design_multisine(std::size_t n, double fs, double f_lo, double f_hi, double target_std, double dc,
                                      HarmonicGrid grid = HarmonicGrid::full, std::size_t group = 4,
                                      std::uint64_t grid_seed = 0) {
    if (n < 4 || n % 2 != 0) {
        throw ConfigError("multisine: n_samples must be even and >= 4");
    }
    if (!(fs > 0.0)) {
        throw ConfigError("multisine: clock frequency must be positive");
    }
    if (!(f_lo >= 0.0 && f_lo < f_hi && f_hi < fs / 2.0 + 1e-12 * fs)) {
        throw ConfigError("multisine: band must satisfy 0 <= f_lo < f_hi <= fs/2");
    }
    if (!(target_std >= 0.0) || !std::isfinite(target_std)) {
        throw ConfigError("multisine: target std must be finite and non-negative");
    }
    const auto ks = detail::select_grid(detail::band_harmonics(n, fs, f_lo, f_hi), grid, group, grid_seed);
    if (ks.empty()) {
        throw ConfigError("no excitable harmonics");
    }
    std::vector<double> amps(n / 2, 0.0);
    if (target_std > 0.0) {
        const double amp = std::sqrt(static_cast<double>(n) * target_std * target_std / (2.0 * static_cast<double>(ks.size())));
        for (auto k : ks) {
            amps[k] = amp;
        }
    }
    return make_multisine_spec(n, fs, std::move(amps), dc);
}

inline MultisineSpec design_flat_multisine(std::size_t n, double fs, double f_lo, double f_hi, double target_std,
                                           double dc) {
    return design_multisine(n, fs, f_lo, f_hi, target_std, dc, HarmonicGrid::full);
}

namespace detail {

inline std::vector<double> synthesize(const MultisineSpec& spec, std::span<const std::complex<double>> bins) {
    std::vector<std::complex<double>> half(spec.n_samples / 2 + 1, {0.0, 0.0});
    half[0] = spec.dc_value * std::sqrt(static_cast<double>(spec.n_samples));
    std::copy(bins.begin() + 1, bins.end(), half.begin() + 1);
    return fft::inverse_scaled(half, spec.n_samples);
}

} // namespace detail

/// One period of a random phase multisine; deterministic in (spec, seed).
inline PeriodicSignal realize_multisine(const MultisineSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::vector<std::complex<double>> bins(spec.n_samples / 2, {0.0, 0.0});
    Rng                               rng(derive_seed(seed, Stream::reference));
    for (auto k : spec.excited) {
        const double phase = spec.phase_law == PhaseLaw::uniform_random ? rng.phase() : 0.0;
        bins[k]            = std::polar(spec.amp_grid[k], phase);
    }
    return {detail::synthesize(spec, bins), spec, seed};
}

/// One period of periodic noise: circular complex Gaussian bins, i.e. Rayleigh magnitudes with
/// E|X(k)|^2 = amp_grid[k]^2 and independent uniform phases.
inline PeriodicSignal realize_periodic_noise(const MultisineSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::vector<std::complex<double>> bins(spec.n_samples / 2, {0.0, 0.0});
    Rng                               rng(derive_seed(seed, Stream::reference));
    for (auto k : spec.excited) {
        const double phase = spec.phase_law == PhaseLaw::uniform_random ? rng.phase() : 0.0;
        const double mag   = spec.amp_grid[k] * std::sqrt(-std::log(rng.uniform_open_low()));
        bins[k]            = std::polar(mag, phase);
    }
    return {detail::synthesize(spec, bins), spec, seed};
}

/// (2/N) sum_{k=1}^{N/2-1} amp_grid[k]^2: the finite-N Riemann sum of the asymptotic variance.
inline double asymptotic_variance(const MultisineSpec& spec) {
    spec.validate();
    // compensated sum
    double sum = 0.0, carry = 0.0;
    for (std::size_t k = 1; k < spec.amp_grid.size(); ++k) {
        const double y = spec.amp_grid[k] * spec.amp_grid[k] - carry;
        const double t = sum + y;
        carry          = (t - sum) - y;
        sum            = t;
    }
    return 2.0 * sum / static_cast<double>(spec.n_samples);
}

/// (1/N) sum of amp_grid[k]^2 over ceil(N f1/fs) <= k <= floor(N f2/fs).
inline double riemann_band_power(const MultisineSpec& spec, double f1, double f2) {
    spec.validate();
    if (!(f1 < f2)) {
        throw ConfigError("empty band");
    }
    if (!(f1 > 0.0 && f2 < spec.clock_freq / 2.0)) {
        throw ConfigError("band must satisfy 0 < f1 < f2 < fs/2");
    }
    const double nd = static_cast<double>(spec.n_samples);
    const auto   k1 = static_cast<std::size_t>(std::ceil(nd * f1 / spec.clock_freq));
    const auto   k2 = std::min(static_cast<std::size_t>(std::floor(nd * f2 / spec.clock_freq)), spec.amp_grid.size() - 1);
    double       sum = 0.0;
    for (std::size_t k = k1; k <= k2; ++k) {
        sum += spec.amp_grid[k] * spec.amp_grid[k];
    }
    return sum / nd;
}

/// Population variance (1/n normalization), the convention of a single realized period.
inline double population_variance(std::span<const double> x) {
    if (x.empty()) {
        return 0.0;
    }
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double       acc  = 0.0;
    for (double v : x) {
        acc += (v - mean) * (v - mean);
    }
    return acc / static_cast<double>(x.size());
}

namespace detail {

/// Schur-Cohn step-down: true iff every root of a[0] z^n + ... + a[n] lies strictly inside |z| < 1.
inline bool schur_stable(std::vector<double> a) {
    while (!a.empty() && a.back() == 0.0) {
        a.pop_back();
    }
    if (a.empty() || a[0] == 0.0) {
        return false;
    }
    while (a.size() > 1) {
        const std::size_t n = a.size() - 1;
        const double      k = a[n] / a[0];
        if (!(std::abs(k) < 1.0)) {
            return false;
        }
        std::vector<double> next(n);
        for (std::size_t i = 0; i < n; ++i) {
            next[i] = (a[i] - k * a[n - i]) / (1.0 - k * k);
        }
        a = std::move(next);
    }
    return true;
}

inline std::vector<double> iir_filter(const ShapingFilter& f, std::span<const double> x) {
    std::vector<double> y(x.size(), 0.0);
    for (std::size_t t = 0; t < x.size(); ++t) {
        double acc = 0.0;
        for (std::size_t i = 0; i < f.b.size() && i <= t; ++i) {
            acc += f.b[i] * x[t - i];
        }
        for (std::size_t i = 1; i < f.a.size() && i <= t; ++i) {
            acc -= f.a[i] * y[t - i];
        }
        y[t] = acc / f.a[0];
    }
    return y;
}

} // namespace detail

inline void validate_shaping(const ShapingFilter& f) {
    if (f.b.empty() || f.a.empty() || f.a[0] == 0.0) {
        throw ConfigError("shaping filter: need non-empty b and a with a[0] != 0");
    }
    if (!detail::schur_stable(f.a)) {
        throw ConfigError("shaping filter is unstable: poles must lie strictly inside the unit circle");
    }
}

/// Zero-mean Gaussian samples with stationary standard deviation spec.std_dev. With a shaping
/// filter the output is colored, started from a burn-in so it is stationary from sample 0.
inline std::vector<double> gaussian_noise(std::size_t n, const NoiseSpec& spec, Stream stream = Stream::generic,
                                          std::uint64_t index = 0) {
    if (n < 1) {
        throw ConfigError("gaussian_noise: need n >= 1");
    }
    if (!(spec.std_dev >= 0.0) || !std::isfinite(spec.std_dev)) {
        throw ConfigError("gaussian_noise: std_dev must be finite and non-negative");
    }
    if (spec.shaping) {
        validate_shaping(*spec.shaping);
    }
    std::vector<double> out(n, 0.0);
    if (spec.std_dev == 0.0) {
        return out;
    }
    Rng rng(derive_seed(spec.seed, stream, index));
    if (!spec.shaping) {
        for (auto& v : out) {
            v = spec.std_dev * rng.normal();
        }
        return out;
    }
    // Impulse response energy fixes the gain; its effective length fixes the burn-in.
    const auto&         filt = *spec.shaping;
    std::vector<double> impulse(1, 1.0);
    std::size_t         len = 64;
    std::vector<double> h;
    double              energy = 0.0;
    for (;; len *= 2) {
        impulse.assign(len, 0.0);
        impulse[0] = 1.0;
        h          = detail::iir_filter(filt, impulse);
        energy     = 0.0;
        for (double v : h) {
            energy += v * v;
        }
        double tail = 0.0;
        for (std::size_t i = len / 2; i < len; ++i) {
            tail += h[i] * h[i];
        }
        if (tail <= 1e-16 * energy || len >= (std::size_t{1} << 20)) {
            break;
        }
    }
    if (!(energy > 0.0)) {
        throw ConfigError("shaping filter has zero gain");
    }
    const std::size_t   burn = len;
    std::vector<double> white(n + burn);
    for (auto& v : white) {
        v = rng.normal();
    }
    const auto   colored = detail::iir_filter(filt, white);
    const double gain    = spec.std_dev / std::sqrt(energy);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = gain * colored[burn + i];
    }
    return out;
}

} // namespace blatk
