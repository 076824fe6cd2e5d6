#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include <blatk/signals.hpp>
#include <blatk/spectra.hpp>
#include <blatk/volterra.hpp>

#include "support/oracles.hpp"

using namespace blatk;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::vector<double> white(std::size_t n, double sigma, std::uint64_t seed) {
    return gaussian_noise(n, NoiseSpec{sigma, std::nullopt, seed});
}

std::vector<double> multisine_periods(std::size_t N, std::size_t periods, std::uint64_t seed) {
    const auto spec = design_flat_multisine(N, 1.0, 0.0, 0.5, 1.0, 0.0);
    return repeat_periods(realize_multisine(spec, seed).samples, periods);
}

} // namespace

TEST_CASE("pure delay kernel", "[volterra]") {
    const auto u = white(32, 1.0, 1);
    for (const auto& k : {VolterraKernel::nfir({NfirTerm{1.0, {1}, {}}}), VolterraKernel::taps({0.0, 1.0})}) {
        const auto y = eval_volterra_dt({k}, u);
        CHECK(y[0] == 0.0);
        for (std::size_t t = 1; t < u.size(); ++t) CHECK(y[t] == u[t - 1]);
        CHECK(k.degree() == 1);
        CHECK_FALSE(k.has_direct_feedthrough());
    }
}

TEST_CASE("benchmark taps without noise are a delay", "[volterra]") {
    const auto sys = paper_nfir(0.0);
    const auto u   = white(40, 1.0, 2);
    const auto y   = eval_volterra_dt(sys.plant, u, std::vector<double>(40, 0.0));
    for (std::size_t t = 1; t < u.size(); ++t) CHECK(y[t] == u[t - 1]);
}

TEST_CASE("noise-coupled term on constant inputs", "[volterra]") {
    const auto k = VolterraKernel::nfir({NfirTerm{1.0, {2}, {0, 0}}});
    CHECK(k.degree() == 3);
    const double c = 0.7;
    const auto   y = eval_volterra_dt({k}, std::vector<double>(10, 1.0), std::vector<double>(10, c));
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
    for (std::size_t t = 2; t < 10; ++t) CHECK_THAT(y[t], WithinRel(c * c, 1e-15));
}

TEST_CASE("constant term is added", "[volterra]") {
    const auto k = VolterraKernel::nfir({NfirTerm{0.5, {}, {}}, NfirTerm{2.0, {0}, {}}});
    const auto y = eval_volterra_dt({k}, std::vector<double>{1.0, 2.0, 3.0});
    CHECK(y == std::vector<double>{2.5, 4.5, 6.5});
    CHECK(k.has_direct_feedthrough());
}

TEST_CASE("dense and separable kernels against direct sums", "[volterra]") {
    const std::size_t   L = 4;
    std::vector<double> h2(L * L);
    for (std::size_t i = 0; i < h2.size(); ++i) h2[i] = 0.1 * static_cast<double>(i % 7) - 0.2;
    const auto dense = VolterraKernel::dense(DenseGrid{2, L, 1.0, h2});
    const std::vector<double> a{0.0, 1.0, -0.5}, b{0.3, 0.2};
    const auto sep = VolterraKernel::separable(SeparableAxes{1.5, 1.0, {a, b}});
    const auto u   = white(30, 1.0, 3);
    const auto yd  = eval_volterra_dt({dense}, u);
    const auto ys  = eval_volterra_dt({sep}, u);
    const auto at  = [&](long t) { return t >= 0 ? u[static_cast<std::size_t>(t)] : 0.0; };
    for (long t = 0; t < 30; ++t) {
        double d = 0.0;
        for (std::size_t i = 0; i < L; ++i)
            for (std::size_t j = 0; j < L; ++j) d += h2[i * L + j] * at(t - long(i)) * at(t - long(j));
        CHECK_THAT(yd[std::size_t(t)], WithinAbs(d, 1e-13));
        double xa = 0.0, xb = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) xa += a[i] * at(t - long(i));
        for (std::size_t i = 0; i < b.size(); ++i) xb += b[i] * at(t - long(i));
        CHECK_THAT(ys[std::size_t(t)], WithinAbs(1.5 * xa * xb, 1e-13));
    }
    CHECK(dense.has_direct_feedthrough());
    CHECK(sep.has_direct_feedthrough());
}

TEST_CASE("continuous kernels must be discretized", "[volterra]") {
    const auto ct = VolterraKernel::dense(DenseGrid{1, 64, 0.01, std::vector<double>(64, 0.0)}, TimeDomain::continuous);
    CHECK_THROWS_WITH(eval_volterra_dt({ct}, std::vector<double>(8, 1.0)), "discretize first");
}

TEST_CASE("dense degree-2 grids are capped", "[volterra]") {
    CHECK_THROWS_AS(VolterraKernel::dense(DenseGrid{2, 4097, 1.0, std::vector<double>(4097ULL * 4097ULL, 0.0)}),
                    ConfigError);
    CHECK_THROWS_AS(VolterraKernel::dense(DenseGrid{2, 3, 1.0, std::vector<double>(8, 0.0)}), ConfigError);
}

TEST_CASE("open loop benchmark", "[volterra]") {
    const auto r = white(64, 1.0, 4);
    const auto w = white(64, 0.75, 5);
    const auto l = simulate_nfir_feedback(0.0, r, w);
    CHECK(l.u == r);
    for (std::size_t t = 2; t < 64; ++t) CHECK_THAT(l.y[t], WithinAbs(r[t - 1] + r[t - 2] * w[t] * w[t], 1e-15));
    CHECK_THROWS_AS(simulate_nfir_feedback(0.3, r, std::vector<double>(3, 0.0)), ConfigError);
}

TEST_CASE("noiseless loop is the delay from u to y", "[volterra]") {
    const std::size_t N = 256;
    const auto        r = multisine_periods(N, 6, 8);
    const auto        l = simulate_nfir_feedback(0.3, r, std::vector<double>(r.size(), 0.0));
    const auto        U = scaled_dft(std::span<const double>(l.u).subspan(5 * N, N));
    const auto        Y = scaled_dft(std::span<const double>(l.y).subspan(5 * N, N));
    for (std::size_t k = 1; k < N / 2; ++k) {
        const auto g = Y.bins[k] / U.bins[k];
        CHECK(std::abs(g - std::polar(1.0, -2.0 * std::numbers::pi * double(k) / double(N))) < 1e-9);
    }
}

TEST_CASE("steady state is periodic without process noise", "[volterra]") {
    const std::size_t N = 128;
    const auto        r = multisine_periods(N, 8, 9);
    const auto        l = simulate_nfir_feedback(0.3, r, std::vector<double>(r.size(), 0.0));
    for (std::size_t t = 2 * N; t < 7 * N; ++t) CHECK(std::abs(l.u[t + N] - l.u[t]) < 1e-9);
}

TEST_CASE("unstable gain diverges", "[volterra]") {
    const auto r = white(100000, 1.0, 10);
    const auto w = white(100000, 0.75, 11);
    try {
        (void)simulate_nfir_feedback(2.0, r, w);
        FAIL("expected divergence");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("loop diverged") != std::string::npos);
        CHECK(e.index() < 100000);
    }
}

TEST_CASE("noise-free stability frontier", "[volterra]") {
    const auto r = white(1000000, 1.0, 12);
    const auto z = std::vector<double>(r.size(), 0.0);
    CHECK_NOTHROW(simulate_nfir_feedback(0.95, r, z));
    CHECK_NOTHROW(simulate_nfir_feedback(-0.95, r, z));
    CHECK_THROWS_AS(simulate_nfir_feedback(1.05, r, z), NumericError);
    CHECK_THROWS_AS(simulate_nfir_feedback(-1.05, r, z), NumericError);
}

TEST_CASE("general loop reproduces the benchmark recursion", "[volterra]") {
    const auto r   = white(500, 1.0, 13);
    const auto w   = white(500, 0.75, 14);
    const auto ref = simulate_nfir_feedback(0.3, r, w);
    const auto gen = simulate_closed_loop(paper_nfir(0.3), r, NoiseSources{w, {}, {}});
    CHECK(gen.u == ref.u);
    CHECK(gen.y == ref.y);

    // explicit identity actuator and feedback blocks
    auto sys     = paper_nfir(0.3);
    sys.actuator = KernelSet{VolterraKernel::nfir({NfirTerm{1.0, {0}, {}}})};
    sys.feedback = KernelSet{VolterraKernel::nfir({NfirTerm{1.0, {0}, {}}})};
    const auto id = simulate_closed_loop(sys, r, NoiseSources{w, {}, {}});
    CHECK(id.u == ref.u);
    CHECK(id.y == ref.y);
}

TEST_CASE("zero kernels pass the reference through", "[volterra]") {
    FeedbackSystemSpec sys;
    sys.plant     = {VolterraKernel::nfir({})};
    sys.loop_gain = 0.5;
    const auto r  = white(50, 1.0, 15);
    const auto l  = simulate_closed_loop(sys, r);
    CHECK(l.u == r);
    CHECK(l.y == std::vector<double>(50, 0.0));
}

TEST_CASE("LTI loop against the hand recursion", "[volterra]") {
    FeedbackSystemSpec sys;
    sys.plant     = {VolterraKernel::taps({0.0, 0.5})};
    sys.loop_gain = 0.5;
    std::vector<double> r(10, 0.0);
    r[0]           = 1.0;
    const auto l   = simulate_closed_loop(sys, r);
    const auto ref = oracles::lti_loop(0.5, 0.5, r);
    for (std::size_t t = 0; t < 10; ++t) {
        CHECK_THAT(l.u[t], WithinAbs(ref.u[t], 1e-15));
        CHECK_THAT(l.y[t], WithinAbs(ref.y[t], 1e-15));
    }
    // u alternates: 1, -0.25, 0.0625, ...
    CHECK_THAT(l.u[2], WithinAbs(0.0625, 1e-15));
}

TEST_CASE("direct feed-through around the loop is rejected", "[volterra]") {
    FeedbackSystemSpec sys;
    sys.plant     = {VolterraKernel::taps({1.0})};
    sys.loop_gain = 0.5;
    CHECK_THROWS_AS(simulate_closed_loop(sys, std::vector<double>(4, 1.0)), ConfigError);
    sys.feedback = KernelSet{VolterraKernel::taps({0.0, 1.0})};
    CHECK_NOTHROW(simulate_closed_loop(sys, std::vector<double>(4, 1.0)));
}

TEST_CASE("noise sources in actuator and feedback", "[volterra]") {
    // u = e + w_act, y = 0.5 u(t-1), f = y + 0.1 w_fb(t), e = r - 0.4 f
    FeedbackSystemSpec sys;
    sys.actuator  = KernelSet{VolterraKernel::nfir({NfirTerm{1.0, {0}, {}}, NfirTerm{1.0, {}, {0}}})};
    sys.plant     = {VolterraKernel::taps({0.0, 0.5})};
    sys.feedback  = KernelSet{VolterraKernel::nfir({NfirTerm{1.0, {0}, {}}, NfirTerm{0.1, {}, {0}}})};
    sys.loop_gain = 0.4;
    const auto r  = white(200, 1.0, 16);
    const auto wa = white(200, 0.2, 17);
    const auto wf = white(200, 0.3, 18);
    const auto l  = simulate_closed_loop(sys, r, NoiseSources{{}, wa, wf});
    double     u_prev = 0.0;
    for (std::size_t t = 0; t < 200; ++t) {
        const double y = 0.5 * u_prev;
        const double f = y + 0.1 * wf[t];
        const double u = r[t] - 0.4 * f + wa[t];
        CHECK_THAT(l.y[t], WithinAbs(y, 1e-14));
        CHECK_THAT(l.u[t], WithinAbs(u, 1e-14));
        u_prev = u;
    }
}

TEST_CASE("homogeneity of the benchmark loop", "[volterra]") {
    const auto r = white(5000, 1.0, 19);
    const auto w = white(5000, 0.75, 20);
    const auto l = simulate_nfir_feedback(0.3, r, w);
    for (double beta : {0.5, 2.0, 10.0}) {
        std::vector<double> rb(r);
        for (auto& v : rb) v *= beta;
        const auto lb = simulate_nfir_feedback(0.3, rb, w);
        for (std::size_t t = 0; t < r.size(); ++t) {
            CHECK(std::abs(lb.u[t] - beta * l.u[t]) <= 1e-10 * std::abs(beta * l.u[t]) + 1e-300);
        }
    }
}

TEST_CASE("conditional mean", "[volterra]") {
    const auto r = multisine_periods(64, 3, 21);

    SECTION("zero noise equals one simulation") {
        const auto c = conditional_mean_response(paper_nfir(0.3), r, ProcessNoiseModel{}, 2, 1);
        const auto s = simulate_nfir_feedback(0.3, r, std::vector<double>(r.size(), 0.0));
        for (std::size_t t = 0; t < r.size(); ++t) CHECK_THAT(c.u[t], WithinAbs(s.u[t], 1e-14));
    }
    SECTION("benchmark mean obeys its LTI recursion") {
        const std::size_t n_mc = 10000;
        ProcessNoiseModel noise;
        noise.plant  = NoiseSpec{0.75, std::nullopt, 0};
        const auto c = conditional_mean_response(paper_nfir(0.3), r, noise, n_mc, 2);
        const double s2 = 0.5625;
        double       sy = 0.0;
        for (double v : c.y) sy += v * v;
        sy = std::sqrt(sy / double(r.size()));
        for (std::size_t t = 2; t < r.size(); ++t) {
            const double res = c.y[t] + 0.3 * c.y[t - 1] + 0.3 * s2 * c.y[t - 2] - r[t - 1] - s2 * r[t - 2];
            CHECK(std::abs(res) <= 5.0 / std::sqrt(double(n_mc)) * sy);
        }
        const auto exact = oracles::nfir_conditional(0.3, 0.75, r);
        for (std::size_t t = 0; t < r.size(); ++t) CHECK(std::abs(c.u[t] - exact.u[t]) <= 5.0 / std::sqrt(double(n_mc)) * sy);
    }
    SECTION("additive noise on a linear plant averages out") {
        FeedbackSystemSpec sys;
        sys.plant     = {VolterraKernel::nfir({NfirTerm{0.8, {1}, {}}, NfirTerm{1.0, {}, {0}}})};
        sys.loop_gain = 0.5;
        ProcessNoiseModel noise;
        noise.plant  = NoiseSpec{0.5, std::nullopt, 0};
        const std::size_t n_mc = 4000;
        const auto c = conditional_mean_response(sys, r, noise, n_mc, 3);
        const auto s = simulate_closed_loop(sys, r);
        // stationary std of y from the noise alone is 0.5 / sqrt(1 - 0.4^2) < 0.6
        for (std::size_t t = 0; t < r.size(); ++t) CHECK(std::abs(c.y[t] - s.y[t]) <= 5.0 * 0.6 / std::sqrt(double(n_mc)));
    }
    CHECK_THROWS_AS(conditional_mean_response(paper_nfir(0.3), r, ProcessNoiseModel{}, 1, 0), ConfigError);
}
