// NFIR benchmark in closed loop: robust and fast-LPM estimates next to the closed forms,
// then a two-power detection run.

#include <cmath>
#include <cstdio>
#include <numbers>

#include <fmt/format.h>

#include <blatk/blatk.hpp>

using namespace blatk;

int main() {
    const double alpha = 0.3, sigma_w = 0.75;

    RunSpec s;
    s.signal       = design_flat_multisine(256, 1.0, 0.0, 0.5, 1.0, 0.0);
    s.system       = paper_nfir(alpha);
    s.process      = plant_noise(sigma_w);
    s.realizations = 50;
    s.periods      = 2;
    s.seed         = 11;
    const auto e   = run_ensemble(s);

    const auto rob = bla_robust(e);
    const auto lpm = bla_fast_lpm(e, LpmConfig{});

    double pu = 0.0;
    for (std::size_t m = 0; m < e.realizations(); ++m) pu += population_variance(e.realization(Channel::input, m));
    oracle::NfirParams p;
    p.alpha   = alpha;
    p.sigma_w = sigma_w;
    p.sigma_u = std::sqrt(pu / double(e.realizations()));
    p.sigma_r = 1.0;

    fmt::print("{:>4} {:>9} {:>9} {:>9} {:>11} {:>11}\n", "k", "|G| true", "robust", "fast-lpm", "var robust", "var pred");
    for (std::size_t i = 0; i < rob.size(); i += 16) {
        const double w  = 2.0 * std::numbers::pi * rob.freq[i];
        const double vp = oracle::nfir_bla_var_true(p, w) / double(e.realizations() * e.periods());
        // LPM skips a few bins near the edges, look the same k up
        double gl = NAN;
        for (std::size_t j = 0; j < lpm.size(); ++j) {
            if (lpm.bins[j] == rob.bins[i]) gl = std::abs(lpm.g[j]);
        }
        fmt::print("{:>4} {:>9.4f} {:>9.4f} {:>9.4f} {:>11.3e} {:>11.3e}\n", rob.bins[i], std::abs(oracle::nfir_bla_true(p, w)),
                   std::abs(rob.g[i]), gl, rob.var_total[i], vp);
    }

    ExperimentSet xs;
    xs.add(rob, "std 1");
    s.signal = design_flat_multisine(256, 1.0, 0.0, 0.5, 2.0, 0.0);
    s.seed   = 12;
    xs.add(bla_robust(run_ensemble(s)), "std 2");
    std::fputs(render_report(classify_nonlinearity(xs)).c_str(), stdout);
    return 0;
}
