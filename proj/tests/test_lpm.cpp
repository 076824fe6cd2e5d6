#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include <blatk/lpm.hpp>
#include <blatk/signals.hpp>
#include <blatk/spectra.hpp>
#include <blatk/volterra.hpp>

using namespace blatk;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::vector<std::size_t> range(std::size_t a, std::size_t b) {
    std::vector<std::size_t> v;
    for (std::size_t k = a; k < b; ++k) v.push_back(k);
    return v;
}

Spectrum random_phase(std::size_t N, std::uint64_t seed) {
    return scaled_dft(realize_multisine(design_flat_multisine(N, 1.0, 0.0, 0.5, 1.0, 0.0), seed).samples);
}

/// 1 / (1 - p e^{-jw})
cplx first_order(double p, double w) { return 1.0 / (1.0 - p * std::polar(1.0, -w)); }

} // namespace

TEST_CASE("window sizing", "[lpm]") {
    const LpmConfig c{2, 10};
    CHECK(c.parameters() == 6);
    CHECK(c.window() == 17);
    CHECK(c.noise_window() == 13);
    CHECK(LpmConfig{4, 11}.window() == 21);
    CHECK_THROWS_AS((LpmConfig{2, 0}.validate()), ConfigError);
}

TEST_CASE("exact linear relation", "[lpm]") {
    const auto R  = random_phase(128, 1);
    Spectrum   Y  = R;
    for (auto& v : Y.bins) v *= 2.0;
    const auto ks = range(1, 64);
    const auto fit = lpm_fit(R, R, Y, LpmConfig{}, ks);
    REQUIRE(fit.size() == ks.size());
    for (const auto& b : fit) {
        REQUIRE(b.valid());
        CHECK(std::abs(b.g_ry - 2.0) < 1e-12);
        CHECK(std::abs(b.g_ru - 1.0) < 1e-12);
        CHECK(std::abs(b.transient_y) < 1e-12);
        CHECK(b.residual.yy < 1e-24);
        CHECK(b.dof == 11.0);
    }
}

TEST_CASE("smooth transient is separated from the FRF", "[lpm]") {
    const std::size_t N  = 512;
    const auto        R  = random_phase(N, 2);
    Spectrum          Y  = R;
    const cplx        c{0.3, -0.2};
    // transient c lambda^k decaying over the bins; it is not the spectrum of a real record,
    // so targets stay clear of the mirrored bins around DC
    for (std::size_t k = 0; k < N / 2; ++k) {
        const double w = 2.0 * std::numbers::pi * double(k) / double(N);
        Y.bins[k]      = first_order(0.5, w) * R.bins[k] + c * std::pow(0.98, double(k));
    }
    const auto ks  = range(9, N / 2 - 8);
    const auto all = range(1, N / 2);
    const auto fit = lpm_fit(R, R, Y, LpmConfig{}, ks, all);
    for (std::size_t i = 0; i < ks.size(); ++i) {
        const double w = 2.0 * std::numbers::pi * double(ks[i]) / double(N);
        CHECK((fit[i].flags & lpm_flag::edge) == 0U);
        CHECK(std::abs(fit[i].g_ry - first_order(0.5, w)) < 1e-3);
    }
}

TEST_CASE("transient of a record started from rest", "[lpm]") {
    // LTI system y(t) = 0.6 y(t-1) + u(t-1) on one period from zero state: Y = G R + T
    const std::size_t N    = 2048;
    const auto        spec = design_flat_multisine(N, 1.0, 0.0, 0.5, 1.0, 0.0);
    const auto        r    = realize_multisine(spec, 3).samples;
    std::vector<double> y(N, 0.0);
    for (std::size_t t = 1; t < N; ++t) y[t] = 0.6 * y[t - 1] + r[t - 1];
    const auto R  = scaled_dft(r);
    const auto Y  = scaled_dft(y);
    const auto ks = range(1, N / 2);
    const auto fit = lpm_fit(R, R, Y, LpmConfig{}, ks);
    double worst_lpm = 0.0, worst_ratio = 0.0;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        const double w = 2.0 * std::numbers::pi * double(ks[i]) / double(N);
        const cplx   G = std::polar(1.0, -w) / (1.0 - 0.6 * std::polar(1.0, -w));
        worst_lpm      = std::max(worst_lpm, std::abs(fit[i].g_ry - G));
        worst_ratio    = std::max(worst_ratio, std::abs(Y.bins[ks[i]] / R.bins[ks[i]] - G));
    }
    CHECK(worst_lpm < 1e-4);
    CHECK(worst_ratio > 10.0 * worst_lpm);
}

TEST_CASE("windows near DC and Nyquist wrap onto mirrored bins", "[lpm]") {
    const auto R  = random_phase(64, 4);
    const auto ks = range(1, 32);
    const auto fit = lpm_fit(R, R, R, LpmConfig{}, ks);
    CHECK((fit.front().flags & lpm_flag::edge) != 0U);
    CHECK((fit.back().flags & lpm_flag::edge) != 0U);
    CHECK((fit[15].flags & lpm_flag::edge) == 0U);
    for (const auto& b : fit) CHECK(std::abs(b.g_ry - 1.0) < 1e-12);
}

TEST_CASE("noise bins give the noise covariance", "[lpm]") {
    // two periods: excited bins are even, odd bins carry noise only
    const std::size_t N = 1024, P = 2, L = N * P;
    const auto        spec = design_flat_multisine(N, 1.0, 0.0, 0.5, 1.0, 0.0);
    const auto        r    = repeat_periods(realize_multisine(spec, 5).samples, P);
    const double      sy = 0.2, su = 0.1;
    const auto        ny = gaussian_noise(L, NoiseSpec{sy, std::nullopt, 6});
    const auto        nu = gaussian_noise(L, NoiseSpec{su, std::nullopt, 7});
    std::vector<double> u(L), y(L);
    for (std::size_t t = 0; t < L; ++t) {
        u[t] = r[t] + nu[t];
        y[t] = 0.5 * r[t] + ny[t];
    }
    const auto Rs = scaled_dft(r), Us = scaled_dft(u), Ys = scaled_dft(y);
    std::vector<std::size_t> targets, noise;
    for (std::size_t k = 1; k < N / 2; ++k) targets.push_back(k * P);
    for (std::size_t l = 1; l < L / 2; ++l)
        if (l % P != 0) noise.push_back(l);
    std::vector<std::size_t> grid;
    std::merge(targets.begin(), targets.end(), noise.begin(), noise.end(), std::back_inserter(grid));
    const auto fit = lpm_fit(Rs, Us, Ys, LpmConfig{}, targets, grid, noise);
    double     vy = 0.0, vu = 0.0;
    cplx       g{0.0, 0.0};
    for (const auto& b : fit) {
        CHECK((b.flags & lpm_flag::noise_alias) == 0U);
        vy += b.noise.yy;
        vu += b.noise.uu;
        g += b.g_ry / b.g_ru;
    }
    const double n = double(fit.size());
    CHECK_THAT(vy / n, WithinRel(sy * sy, 0.1));
    CHECK_THAT(vu / n, WithinRel(su * su, 0.1));
    CHECK(std::abs(g / n - 0.5) < 0.01);
}

TEST_CASE("rank deficiency", "[lpm]") {
    const auto R  = random_phase(128, 8);
    Spectrum   Z  = R;
    for (auto& v : Z.bins) v = 0.0;
    const auto ks  = range(1, 64);
    const auto fit = lpm_fit(Z, R, R, LpmConfig{}, ks);
    for (const auto& b : fit) {
        CHECK_FALSE(b.valid());
        CHECK((b.flags & lpm_flag::widened) != 0U);
    }
    CHECK_THROWS_AS(lpm_fit(R, R, R, LpmConfig{}, range(1, 10)), ConfigError);
}

TEST_CASE("ratio variance", "[lpm]") {
    const Cov2 c{2.0, 1.0, {0.5, 0.0}};
    // (2 + |g|^2 * 1 - 2 Re(conj(g) 0.5)) * s / |g_ru|^2 with g = 1, g_ru = 2, s = 0.25
    CHECK_THAT(ratio_variance(c, 1.0, 2.0, 0.25), WithinRel((2.0 + 1.0 - 1.0) * 0.25 / 4.0, 1e-15));
    CHECK(ratio_variance(Cov2{}, 1.0, 1.0, 1.0) == 0.0);
}
