#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <blatk/error.hpp>
#include <blatk/fft.hpp>

namespace blatk {

using cplx = std::complex<double>;

/// sqrt(N)-scaled DFT bins k = 0 .. N/2-1 of a real record of length N.
struct Spectrum {
    std::vector<cplx> bins;
    std::size_t       n_samples{0};
    double            clock_freq{1.0};

    [[nodiscard]] double freq(std::size_t k) const {
        return static_cast<double>(k) * clock_freq / static_cast<double>(n_samples);
    }
    [[nodiscard]] std::size_t size() const noexcept { return bins.size(); }
    [[nodiscard]] const cplx& operator[](std::size_t k) const { return bins[k]; }
};

inline Spectrum scaled_dft(std::span<const double> samples, double clock_freq = 1.0) {
    const std::size_t n = samples.size();
    if (n < 4 || n % 2 != 0) {
        throw ConfigError("scaled_dft: record length must be even and >= 4");
    }
    auto half = fft::forward_scaled(samples);
    half.pop_back(); // drop the Nyquist bin
    half[0] = {half[0].real(), 0.0};
    return {std::move(half), n, clock_freq};
}

enum class Channel { reference, input, output };

inline const char* channel_name(Channel c) {
    switch (c) {
    case Channel::reference: return "reference";
    case Channel::input: return "input";
    case Channel::output: return "output";
    }
    return "?";
}

inline Channel parse_channel(const std::string& s) {
    if (s == "reference") return Channel::reference;
    if (s == "input") return Channel::input;
    if (s == "output") return Channel::output;
    throw ConfigError("unknown channel '" + s + "'");
}

/// Provenance carried with an ensemble and copied into every estimate.
struct EnsembleMeta {
    std::uint64_t                 seed{0};
    std::string                   config_digest;
    std::string                   system; ///< preset name, e.g. "paper-nfir"; empty when imported
    std::map<std::string, double> params;
    std::vector<std::size_t>      excited; ///< excited harmonics of one period; empty = derive from reference
};

/// M realizations x P periods x N samples per channel, row-major, periods consecutive in time.
class SignalEnsemble {
public:
    SignalEnsemble() = default;
    SignalEnsemble(std::size_t realizations, std::size_t periods, std::size_t n_samples, double clock_freq)
        : m_(realizations), p_(periods), n_(n_samples), fs_(clock_freq) {
        if (m_ < 1 || p_ < 1) {
            throw ConfigError("ensemble: need M >= 1 and P >= 1");
        }
        if (n_ < 4 || n_ % 2 != 0) {
            throw ConfigError("ensemble: N must be even and >= 4");
        }
        if (!(fs_ > 0.0)) {
            throw ConfigError("ensemble: clock frequency must be positive");
        }
    }

    [[nodiscard]] std::size_t realizations() const noexcept { return m_; }
    [[nodiscard]] std::size_t periods() const noexcept { return p_; }
    [[nodiscard]] std::size_t n_samples() const noexcept { return n_; }
    [[nodiscard]] double      clock_freq() const noexcept { return fs_; }

    [[nodiscard]] bool has(Channel c) const { return data_[index(c)].has_value(); }

    void set_channel(Channel c, std::vector<double> values) {
        if (values.size() != m_ * p_ * n_) {
            throw ConfigError(std::string("ensemble: channel '") + channel_name(c) + "' has the wrong size");
        }
        data_[index(c)] = std::move(values);
    }

    [[nodiscard]] std::span<const double> channel(Channel c) const { return require(c); }

    /// All P periods of realization m, contiguous.
    [[nodiscard]] std::span<const double> realization(Channel c, std::size_t m) const {
        return require(c).subspan(m * p_ * n_, p_ * n_);
    }

    [[nodiscard]] std::span<const double> period(Channel c, std::size_t m, std::size_t p) const {
        return require(c).subspan((m * p_ + p) * n_, n_);
    }

    EnsembleMeta meta;

private:
    static std::size_t index(Channel c) { return static_cast<std::size_t>(c); }

    [[nodiscard]] std::span<const double> require(Channel c) const {
        const auto& slot = data_[index(c)];
        if (!slot) {
            throw ConfigError(std::string("ensemble: channel '") + channel_name(c) + "' missing");
        }
        return *slot;
    }

    std::size_t                                       m_{0}, p_{0}, n_{0};
    double                                            fs_{1.0};
    std::array<std::optional<std::vector<double>>, 3> data_;
};

/// Spectra indexed [m][p].
using SpectrumGrid = std::vector<std::vector<Spectrum>>;

inline SpectrumGrid ensemble_spectra(const SignalEnsemble& e, Channel c) {
    SpectrumGrid out(e.realizations());
    for (std::size_t m = 0; m < e.realizations(); ++m) {
        out[m].reserve(e.periods());
        for (std::size_t p = 0; p < e.periods(); ++p) {
            out[m].push_back(scaled_dft(e.period(c, m, p), e.clock_freq()));
        }
    }
    return out;
}

struct SpectrumStats {
    Spectrum            mean;
    std::vector<double> variance; ///< per bin, (1/(n-1)) sum |x - mean|^2; empty if n == 1
    std::size_t         count{0};
};

/// Per-bin complex mean and sample variance over replicates.
inline SpectrumStats sample_stats(std::span<const Spectrum> replicates, bool need_variance = true) {
    const std::size_t n = replicates.size();
    if (n == 0) {
        throw ConfigError("sample_stats: no replicates");
    }
    if (need_variance && n < 2) {
        throw ConfigError("insufficient replicates");
    }
    const std::size_t bins = replicates[0].size();
    SpectrumStats     s;
    s.count = n;
    s.mean  = {std::vector<cplx>(bins, {0.0, 0.0}), replicates[0].n_samples, replicates[0].clock_freq};
    // running mean: exact when all replicates are equal
    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = replicates[i];
        if (r.size() != bins) {
            throw ConfigError("sample_stats: replicates differ in length");
        }
        const double inv = 1.0 / static_cast<double>(i + 1);
        for (std::size_t k = 0; k < bins; ++k) {
            s.mean.bins[k] += (r.bins[k] - s.mean.bins[k]) * inv;
        }
    }
    if (need_variance) {
        s.variance.assign(bins, 0.0);
        for (const auto& r : replicates) {
            for (std::size_t k = 0; k < bins; ++k) {
                s.variance[k] += std::norm(r.bins[k] - s.mean.bins[k]);
            }
        }
        for (auto& v : s.variance) {
            v /= static_cast<double>(n - 1);
        }
    }
    return s;
}

/// (1/(n-1)) sum (a - mean a) conj(b - mean b), per bin.
inline std::vector<cplx> sample_cross_covariance(std::span<const Spectrum> a, std::span<const Spectrum> b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw ConfigError("insufficient replicates");
    }
    const auto        ma = sample_stats(a, false).mean;
    const auto        mb = sample_stats(b, false).mean;
    std::vector<cplx> cov(ma.size(), {0.0, 0.0});
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t k = 0; k < cov.size(); ++k) {
            cov[k] += (a[i].bins[k] - ma.bins[k]) * std::conj(b[i].bins[k] - mb.bins[k]);
        }
    }
    for (auto& v : cov) {
        v /= static_cast<double>(a.size() - 1);
    }
    return cov;
}

enum class Axis { periods, realizations };

/// Statistics along one axis of an [m][p] grid: one result per realization (Axis::periods)
/// or per period (Axis::realizations).
inline std::vector<SpectrumStats> stats_along(const SpectrumGrid& grid, Axis axis, bool need_variance = true) {
    std::vector<SpectrumStats> out;
    if (grid.empty()) {
        return out;
    }
    if (axis == Axis::periods) {
        for (const auto& row : grid) {
            out.push_back(sample_stats(row, need_variance));
        }
    } else {
        for (std::size_t p = 0; p < grid[0].size(); ++p) {
            std::vector<Spectrum> column;
            for (const auto& row : grid) {
                column.push_back(row[p]);
            }
            out.push_back(sample_stats(column, need_variance));
        }
    }
    return out;
}

/// Excited harmonics of a periodic reference: bins whose power exceeds a relative floor.
inline std::vector<std::size_t> detect_excited(const Spectrum& reference, double rel_floor = 1e-20) {
    double peak = 0.0;
    for (std::size_t k = 1; k < reference.size(); ++k) {
        peak = std::max(peak, std::norm(reference[k]));
    }
    std::vector<std::size_t> ks;
    if (peak == 0.0) {
        return ks;
    }
    for (std::size_t k = 1; k < reference.size(); ++k) {
        if (std::norm(reference[k]) > rel_floor * peak) {
            ks.push_back(k);
        }
    }
    return ks;
}

} // namespace blatk
