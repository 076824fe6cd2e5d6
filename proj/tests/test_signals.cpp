#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include <blatk/signals.hpp>
#include <blatk/spectra.hpp>

#include "support/oracles.hpp"

using namespace blatk;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

double sample_std(const std::vector<double>& x) { return std::sqrt(population_variance(x)); }

} // namespace

TEST_CASE("flat multisine over the full band", "[signals]") {
    const auto spec = design_flat_multisine(1024, 1.0, 0.0, 0.5, 1.0, 0.0);
    REQUIRE(spec.excited.size() == 511);
    REQUIRE(spec.excited.front() == 1);
    REQUIRE(spec.excited.back() == 511);
    const double amp = std::sqrt(1024.0 / (2.0 * 511.0));
    for (auto k : spec.excited) CHECK_THAT(spec.amp_grid[k], WithinRel(amp, 1e-14));
    CHECK(spec.amp_grid[0] == 0.0);
    CHECK_THAT(asymptotic_variance(spec), WithinRel(1.0, 1e-14));

    const auto sig = realize_multisine(spec, 7);
    CHECK_THAT(sample_std(sig.samples), WithinAbs(1.0, 1e-12));
}

TEST_CASE("zero target std gives a zero grid", "[signals]") {
    const auto spec = design_flat_multisine(64, 1.0, 0.0, 0.5, 0.0, 0.0);
    for (double a : spec.amp_grid) CHECK(a == 0.0);
    CHECK(asymptotic_variance(spec) == 0.0);
    const auto sig = realize_multisine(spec, 3);
    for (double v : sig.samples) CHECK(v == 0.0);
}

TEST_CASE("band selection counts the harmonics inside the band", "[signals]") {
    const double fs = 625e3;
    const std::size_t n = 16384;
    // harmonics 3..524 of this grid
    const auto spec = design_flat_multisine(n, fs, 3.0 * fs / n, 524.0 * fs / n, 1.0, 0.0);
    REQUIRE(spec.excited.size() == 522);
    CHECK(spec.excited.front() == 3);
    CHECK(spec.excited.back() == 524);
}

TEST_CASE("design rejects an empty band", "[signals]") {
    CHECK_THROWS_WITH(design_flat_multisine(64, 1.0, 0.2, 0.2 + 1e-4, 1.0, 0.0), "no excitable harmonics");
    CHECK_THROWS_AS(design_flat_multisine(63, 1.0, 0.0, 0.5, 1.0, 0.0), ConfigError);
}

TEST_CASE("single tone with zero phase is a cosine", "[signals]") {
    const std::size_t   N = 64;
    std::vector<double> amps(N / 2, 0.0);
    amps[1]         = std::sqrt(static_cast<double>(N)) / 2.0;
    const auto spec = make_multisine_spec(N, 1.0, amps, 0.0, PhaseLaw::deterministic_debug);
    const auto sig  = realize_multisine(spec, 0);
    for (std::size_t t = 0; t < N; ++t) {
        CHECK_THAT(sig.samples[t], WithinAbs(std::cos(2.0 * std::numbers::pi * static_cast<double>(t) / N), 1e-13));
    }
}

TEST_CASE("realizations are deterministic in the seed", "[signals]") {
    const auto spec = design_flat_multisine(256, 1.0, 0.0, 0.5, 1.0, 0.0);
    CHECK(realize_multisine(spec, 42).samples == realize_multisine(spec, 42).samples);
    CHECK(realize_multisine(spec, 42).samples != realize_multisine(spec, 43).samples);
    CHECK(realize_periodic_noise(spec, 42).samples == realize_periodic_noise(spec, 42).samples);
}

TEST_CASE("dc value sets the mean", "[signals]") {
    const auto spec = design_flat_multisine(128, 1.0, 0.0, 0.5, 1.0, 0.25);
    const auto sig  = realize_multisine(spec, 11);
    double     m    = 0.0;
    double     peak = 0.0;
    for (double v : sig.samples) {
        m += v;
        peak = std::max(peak, std::abs(v));
    }
    m /= static_cast<double>(sig.samples.size());
    CHECK(std::abs(m - 0.25) < 1e-10 * peak);
}

TEST_CASE("the spectrum of one period returns the amplitude grid", "[signals]") {
    const auto spec = design_multisine(256, 2.0, 0.05, 0.8, 0.7, 0.0, HarmonicGrid::odd);
    const auto sig  = realize_multisine(spec, 5);
    const auto X    = oracles::naive_dft(sig.samples);
    for (std::size_t k = 1; k < X.size(); ++k) {
        CHECK_THAT(std::abs(X[k]), WithinAbs(spec.amp_grid[k], 1e-10 * (1.0 + spec.amp_grid[k])));
    }
    // full-grid conjugate symmetry
    const auto full = [&](std::size_t k) {
        std::complex<double> acc{0.0, 0.0};
        for (std::size_t t = 0; t < 256; ++t) {
            acc += sig.samples[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t % 256) / 256.0);
        }
        return acc;
    };
    for (std::size_t k : {3U, 17U, 101U}) {
        CHECK(std::abs(full(256 - k) - std::conj(full(k))) < 1e-10 * std::abs(full(k)) + 1e-12);
    }
}

TEST_CASE("asymptotic variance equals the sample variance of any realization", "[signals]") {
    const auto spec = design_multisine(512, 1.0, 0.01, 0.3, 1.3, 0.0, HarmonicGrid::odd_random, 4, 9);
    for (std::uint64_t s = 0; s < 5; ++s) {
        CHECK_THAT(population_variance(realize_multisine(spec, s).samples), WithinRel(asymptotic_variance(spec), 1e-10));
    }
    std::vector<double> amps(512 / 2, 0.0);
    amps[7] = 3.0;
    CHECK_THAT(asymptotic_variance(make_multisine_spec(512, 1.0, amps)), WithinRel(2.0 * 9.0 / 512.0, 1e-15));
}

TEST_CASE("odd random grid leaves one odd harmonic per group out", "[signals]") {
    const auto spec = design_multisine(1024, 1.0, 0.0, 0.5, 1.0, 0.0, HarmonicGrid::odd_random, 4, 1);
    for (auto k : spec.excited) CHECK(k % 2 == 1);
    CHECK(spec.excited.size() == 256 - 64);
}

TEST_CASE("band power", "[signals]") {
    const auto spec = design_flat_multisine(1024, 1.0, 0.0, 0.5, 1.0, 0.0);
    CHECK_THAT(riemann_band_power(spec, 1e-9, 0.5 - 1e-9), WithinRel(0.5, 1e-12));
    const auto narrow = design_flat_multisine(1024, 1.0, 0.1, 0.2, 1.0, 0.0);
    CHECK(riemann_band_power(narrow, 0.3, 0.4) == 0.0);
    const auto twin = narrow;
    for (double f : {0.05, 0.12, 0.15}) {
        CHECK(riemann_band_power(narrow, f, f + 0.04) == riemann_band_power(twin, f, f + 0.04));
    }
    CHECK_THROWS_WITH(riemann_band_power(spec, 0.2, 0.1), "empty band");
}

TEST_CASE("phase moments vanish over realizations", "[signals]") {
    std::vector<double> amps(32, 0.0);
    amps[3] = amps[9] = 1.0;
    const auto                spec = make_multisine_spec(64, 1.0, amps);
    const int                 n    = 10000;
    std::complex<double>      m1[2]{}, m2[2]{};
    for (int s = 0; s < n; ++s) {
        const auto X = scaled_dft(realize_multisine(spec, static_cast<std::uint64_t>(s)).samples);
        int        i = 0;
        for (std::size_t k : {3U, 9U}) {
            const auto e = X.bins[k] / std::abs(X.bins[k]);
            m1[i] += e;
            m2[i] += e * e;
            ++i;
        }
    }
    for (int i = 0; i < 2; ++i) {
        CHECK(std::abs(m1[i] / double(n)) <= 3.0 / std::sqrt(double(n)));
        CHECK(std::abs(m2[i] / double(n)) <= 3.0 / std::sqrt(double(n)));
    }
}

TEST_CASE("periodic noise has the designed mean square", "[signals]") {
    std::vector<double> amps(32, 0.0);
    amps[5]         = 2.0;
    const auto spec = make_multisine_spec(64, 1.0, amps);
    const int  n    = 10000;
    double     s1 = 0.0, s2 = 0.0;
    for (int s = 0; s < n; ++s) {
        const double p = std::norm(scaled_dft(realize_periodic_noise(spec, static_cast<std::uint64_t>(s)).samples).bins[5]);
        s1 += p;
        s2 += p * p;
    }
    const double mean = s1 / n;
    const double se   = std::sqrt((s2 / n - mean * mean) / n);
    CHECK(std::abs(mean - 4.0) <= 3.0 * se);

    std::vector<double> zero(32, 0.0);
    for (double v : realize_periodic_noise(make_multisine_spec(64, 1.0, zero), 1).samples) CHECK(v == 0.0);
}

TEST_CASE("gaussian noise", "[signals]") {
    CHECK(gaussian_noise(16, NoiseSpec{0.0, std::nullopt, 1}) == std::vector<double>(16, 0.0));
    const auto w = gaussian_noise(1000000, NoiseSpec{0.75, std::nullopt, 2});
    const double s = std::sqrt(population_variance(w));
    CHECK(s >= 0.747);
    CHECK(s <= 0.753);
    CHECK(w == gaussian_noise(1000000, NoiseSpec{0.75, std::nullopt, 2}));
    CHECK(w != gaussian_noise(1000000, NoiseSpec{0.75, std::nullopt, 2}, Stream::plant_noise));
}

TEST_CASE("shaped noise keeps the stationary std", "[signals]") {
    const NoiseSpec spec{0.5, ShapingFilter{{1.0}, {1.0, -0.9}}, 4};
    const auto      w = gaussian_noise(400000, spec);
    CHECK_THAT(std::sqrt(population_variance(w)), WithinRel(0.5, 0.02));
    // lag-one correlation of an AR(1) with pole 0.9
    double c0 = 0.0, c1 = 0.0;
    for (std::size_t t = 1; t < w.size(); ++t) {
        c0 += w[t] * w[t];
        c1 += w[t] * w[t - 1];
    }
    CHECK_THAT(c1 / c0, WithinAbs(0.9, 0.01));
    CHECK_THROWS_AS(gaussian_noise(10, NoiseSpec{1.0, ShapingFilter{{1.0}, {1.0, -1.1}}, 0}), ConfigError);
}
