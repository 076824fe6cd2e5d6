#include <catch_amalgamated.hpp>

#include <cmath>

#include <blatk/detect.hpp>
#include <blatk/experiment.hpp>

using namespace blatk;
using Catch::Matchers::ContainsSubstring;

namespace {

BlaEstimate robust_at(FeedbackSystemSpec sys, double sigma_r, double sigma_w, double noise_y, std::uint64_t seed,
                      std::size_t M = 50) {
    RunSpec s;
    s.signal       = design_flat_multisine(128, 1.0, 0.0, 0.5, sigma_r, 0.0);
    s.system       = std::move(sys);
    s.process      = plant_noise(sigma_w);
    s.noise_y      = noise_y;
    s.realizations = M;
    s.periods      = 2;
    s.seed         = seed;
    return bla_robust(run_ensemble(s));
}

ExperimentSet pair(FeedbackSystemSpec sys, double r1, double r2, double sigma_w, double noise_y) {
    ExperimentSet xs;
    xs.add(robust_at(sys, r1, sigma_w, noise_y, 1), "low");
    xs.add(robust_at(sys, r2, sigma_w, noise_y, 2), "high");
    return xs;
}

/// FIR plant with an extra tap c w(t)^2 u(t - 3): its BLA moves with sigma_w.
FeedbackSystemSpec noisy_tap_plant(double alpha) {
    FeedbackSystemSpec s;
    s.name      = "noisy-tap";
    s.plant     = {VolterraKernel::nfir({NfirTerm{1.0, {1}, {}}, NfirTerm{-0.5, {2}, {}}, NfirTerm{0.8, {3}, {0, 0}}})};
    s.loop_gain = alpha;
    return s;
}

} // namespace

TEST_CASE("NFIR benchmark: Type II, Type I undecided", "[detect]") {
    const auto rep = classify_nonlinearity(pair(paper_nfir(0.3), 1.0, 2.0, 0.75, 0.0));
    CHECK_FALSE(rep.bla_changed.value);
    CHECK_FALSE(rep.var_nl_changed.value);
    CHECK(rep.noise_evaluable);
    CHECK_FALSE(rep.var_noise_inverse_power.value);
    CHECK(rep.type_ii);
    CHECK(rep.type_i == TypeI::undecided);
    CHECK_FALSE(rep.linear_consistent);
    CHECK(rep.powers.size() == 2);
}

TEST_CASE("LTI system with output noise: linear", "[detect]") {
    const auto rep = classify_nonlinearity(pair(fir_system("lti", {0.0, 1.0, 0.5}), 1.0, 2.0, 0.0, 0.2));
    CHECK_FALSE(rep.bla_changed.value);
    CHECK_FALSE(rep.var_nl_changed.value);
    CHECK(rep.var_noise_inverse_power.value);
    CHECK(rep.type_i == TypeI::no);
    CHECK_FALSE(rep.type_ii);
    CHECK(rep.linear_consistent);
}

TEST_CASE("static cubic: Type I", "[detect]") {
    const std::vector<double> c{1.0, 0.0, 0.1};
    const auto rep = classify_nonlinearity(pair(static_polynomial("cubic", c), 0.5, 1.0, 0.0, 0.0));
    CHECK(rep.bla_changed.value);
    CHECK(rep.type_i == TypeI::yes);
    CHECK_FALSE(rep.noise_evaluable);
    CHECK_FALSE(rep.type_ii);
    CHECK_FALSE(rep.linear_consistent);
}

TEST_CASE("a single reference power is rejected", "[detect]") {
    ExperimentSet xs;
    xs.add(robust_at(paper_nfir(0.3), 1.0, 0.75, 0.0, 1, 10));
    CHECK_THROWS_WITH(classify_nonlinearity(xs), "need >=2 powers");
    xs.add(robust_at(paper_nfir(0.3), 1.0, 0.75, 0.0, 2, 10));
    CHECK_THROWS_WITH(classify_nonlinearity(xs), "need >=2 powers");
    CHECK_THROWS_AS(classify_nonlinearity(ExperimentSet{}), ConfigError);
    CHECK_THROWS_AS(classify_nonlinearity(pair(paper_nfir(0.3), 1.0, 2.0, 0.75, 0.0), 0.0), ConfigError);
}

TEST_CASE("deterministic and monotone in the threshold", "[detect]") {
    const std::vector<double> c{1.0, 0.0, 0.05};
    const auto xs = pair(static_polynomial("cubic", c), 0.5, 1.0, 0.1, 0.0);
    const auto a  = classify_nonlinearity(xs);
    const auto b  = classify_nonlinearity(xs);
    CHECK(render_report(a) == render_report(b));
    CHECK(a.bla_changed.score == b.bla_changed.score);
    CHECK(a.var_noise_inverse_power.score == b.var_noise_inverse_power.score);

    const auto yes_count = [](const DetectionReport& r) {
        return int(r.bla_changed.value) + int(r.var_nl_changed.value) + int(r.type_i == TypeI::yes);
    };
    int prev = yes_count(classify_nonlinearity(xs, 0.5));
    for (double z : {1.0, 2.0, 3.0, 5.0, 10.0, 100.0}) {
        const auto r = classify_nonlinearity(xs, z);
        CHECK(yes_count(r) <= prev);
        prev = yes_count(r);
    }
}

TEST_CASE("report rendering", "[detect]") {
    const auto s = render_report(classify_nonlinearity(pair(paper_nfir(0.3), 1.0, 2.0, 0.75, 0.0)));
    CHECK_THAT(s, ContainsSubstring("BLA changes?"));
    CHECK_THAT(s, ContainsSubstring("Type II: yes"));
    CHECK_THAT(s, ContainsSubstring("Type I: undecided"));
    CHECK(std::string(type_i_name(TypeI::no)) == "no");
}

TEST_CASE("process noise level shifts the BLA of a noisy-parameter plant", "[detect]") {
    const auto lo  = robust_at(noisy_tap_plant(0.2), 1.0, 0.3, 0.0, 5, 100);
    const auto hi  = robust_at(noisy_tap_plant(0.2), 1.0, 0.9, 0.0, 6, 100);
    const auto lo2 = robust_at(noisy_tap_plant(0.2), 1.0, 0.3, 0.0, 7, 100);
    const auto v   = process_noise_shift(lo, hi);
    CHECK(v.value);
    CHECK(v.score > 0.5);
    CHECK_FALSE(process_noise_shift(lo, lo2).value);
}
