// blatk: generate -> simulate -> estimate -> detect, plus a text report of estimate files.
//
// Exit codes: 0 ok, 2 configuration error, 3 numeric failure (divergence, no valid bins).

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include <blatk/blatk.hpp>

namespace fs = std::filesystem;
using namespace blatk;
using io::json;

namespace {

struct Global {
    std::uint64_t seed{1};
    std::string   out{"."};
    std::string   format{"json"};
};

std::string out_path(const Global& g, const std::string& stem, const std::string& ext) {
    fs::create_directories(g.out);
    return (fs::path(g.out) / (stem + "." + ext)).string();
}

void save_ensemble(const Global& g, const std::string& stem, const SignalEnsemble& e) {
    if (g.format == "json") {
        io::write_file(out_path(g, stem, "json"), io::to_json(e).dump(1) + "\n");
    } else {
        std::ostringstream os;
        io::write_ensemble_csv(os, e);
        io::write_file(out_path(g, stem, "csv"), os.str());
    }
}

void save_estimate(const Global& g, const std::string& stem, const BlaEstimate& est) {
    if (g.format == "json") {
        io::write_file(out_path(g, stem, "json"), io::to_json(est).dump(1) + "\n");
    } else {
        std::ostringstream os;
        io::write_estimate_csv(os, est);
        io::write_file(out_path(g, stem, "csv"), os.str());
    }
}

/// Digest of the effective configuration plus the contents of every input file.
std::string config_digest(json cfg, const std::vector<std::string>& inputs) {
    json files = json::array();
    for (const auto& p : inputs) files.push_back(io::digest(io::read_file(p)));
    cfg["inputs"] = files;
    return io::digest(cfg.dump());
}

HarmonicGrid parse_grid(const std::string& s) {
    if (s == "full") return HarmonicGrid::full;
    if (s == "odd") return HarmonicGrid::odd;
    if (s == "odd-random") return HarmonicGrid::odd_random;
    throw ConfigError("unknown harmonic grid '" + s + "'");
}

// ---- generate -------------------------------------------------------------------------------

struct GenerateOpts {
    std::string preset;
    std::size_t n{1024};
    double      fs{1.0};
    double      f_lo{0.0};
    double      f_hi{0.5};
    double      std_dev{1.0};
    double      dc{0.0};
    std::string grid{"full"};
    std::size_t group{4};
    std::size_t realizations{100};
    std::string excitation{"multisine"};
};

int cmd_generate(const Global& g, GenerateOpts o) {
    if (!o.preset.empty() && o.preset != "paper-sv") {
        throw ConfigError("unknown signal preset '" + o.preset + "'");
    }
    RunSpec s;
    s.signal       = design_multisine(o.n, o.fs, o.f_lo, o.f_hi, o.std_dev, o.dc, parse_grid(o.grid), o.group, g.seed);
    s.realizations = o.realizations;
    s.seed         = g.seed;
    if (o.excitation == "periodic-noise") {
        s.excitation = Excitation::periodic_noise;
    } else if (o.excitation != "multisine") {
        throw ConfigError("unknown excitation '" + o.excitation + "'");
    }
    if (o.std_dev == 0.0) {
        std::cerr << "warning: zero target std, the ensemble is all zeros\n";
    }
    const json cfg{{"command", "generate"}, {"preset", o.preset}, {"n", o.n},         {"fs", o.fs},
                   {"f_lo", o.f_lo},        {"f_hi", o.f_hi},     {"std", o.std_dev}, {"dc", o.dc},
                   {"grid", o.grid},        {"group", o.group},   {"M", o.realizations}, {"excitation", o.excitation},
                   {"seed", g.seed}};
    const auto dg = config_digest(cfg, {});

    auto e               = generate_references(s);
    e.meta.config_digest = dg;
    e.meta.params        = {{"std", o.std_dev}, {"dc", o.dc}};

    auto spec_json             = io::to_json(s.signal, g.seed);
    spec_json["config_digest"] = dg;
    io::write_file(out_path(g, "multisine", "json"), spec_json.dump(1) + "\n");
    save_ensemble(g, "reference", e);

    const double bin = o.fs / double(o.n);
    const double f1  = std::max(o.f_lo, 0.5 * bin);
    const double f2  = std::min(o.f_hi, o.fs / 2.0 - 0.5 * bin);
    double       sd  = 0.0;
    for (std::size_t m = 0; m < e.realizations(); ++m) sd += std::sqrt(population_variance(e.period(Channel::reference, m, 0)));
    fmt::print("designed std {:.10g} (mean realized {:.10g}), band power {:.10g} over [{:g}, {:g}] Hz, {} excited harmonics, M = {}\n",
               std::sqrt(asymptotic_variance(s.signal)), sd / double(e.realizations()), riemann_band_power(s.signal, f1, f2), f1,
               f2, s.signal.excited.size(), e.realizations());
    return 0;
}

// ---- simulate -------------------------------------------------------------------------------

struct SimulateOpts {
    std::string input;
    std::string preset{"paper-nfir"};
    std::string system_file;
    double      alpha{0.3};
    double      sigma_w{0.75};
    std::size_t periods{2};
    std::size_t warmup{2};
    double      noise_u{0.0};
    double      noise_y{0.0};
};

int cmd_simulate(const Global& g, const SimulateOpts& o) {
    const auto refs = io::load_ensemble(o.input);
    RunSpec    s;
    s.periods        = o.periods;
    s.warmup_periods = o.warmup;
    s.noise_u        = o.noise_u;
    s.noise_y        = o.noise_y;
    s.seed           = g.seed;
    std::vector<std::string> inputs{o.input};
    if (!o.system_file.empty()) {
        s.system = io::system_from_json(json::parse(io::read_file(o.system_file)));
        if (o.sigma_w > 0.0) s.process = plant_noise(o.sigma_w);
        inputs.push_back(o.system_file);
    } else if (o.preset == "paper-nfir") {
        s.system  = paper_nfir(o.alpha);
        s.process = plant_noise(o.sigma_w);
    } else {
        throw ConfigError("unknown system preset '" + o.preset + "'");
    }
    const json cfg{{"command", "simulate"}, {"preset", o.system_file.empty() ? o.preset : ""}, {"alpha", o.alpha},
                   {"sigma_w", o.sigma_w},  {"P", o.periods}, {"warmup_periods", o.warmup}, {"noise_u", o.noise_u},
                   {"noise_y", o.noise_y},  {"seed", g.seed}};
    SignalEnsemble e;
    try {
        e = simulate_references(s, refs);
    } catch (const NumericError& err) {
        std::string msg = err.what();
        if (o.system_file.empty()) {
            msg += fmt::format("; stability requires 0 < alpha < min(4 sigma_w^2, 1/sigma_w^2) (|alpha| < 1 when sigma_w = 0), "
                               "got alpha = {:g}, sigma_w = {:g}: {}",
                               o.alpha, o.sigma_w, oracle::nfir_stability_ok(o.alpha, o.sigma_w) ? "inside" : "violated");
        }
        throw NumericError(msg, err.index());
    }
    e.meta.config_digest = config_digest(cfg, inputs);
    if (o.system_file.empty()) {
        e.meta.params = {{"alpha", o.alpha}, {"sigma_w", o.sigma_w}};
    } else {
        e.meta.params = {{"sigma_w", o.sigma_w}};
    }
    e.meta.params["noise_u"] = o.noise_u;
    e.meta.params["noise_y"] = o.noise_y;
    save_ensemble(g, "ensemble", e);
    fmt::print("simulated {} x {} periods of {} samples through '{}' ({} warm-up periods discarded)\n", e.realizations(),
               e.periods(), e.n_samples(), e.meta.system, o.warmup);
    if (o.system_file.empty() && !oracle::nfir_stability_ok(o.alpha, o.sigma_w)) {
        std::cerr << "warning: outside the stability region, the record may not be stationary\n";
    }
    return 0;
}

// ---- estimate -------------------------------------------------------------------------------

struct EstimateOpts {
    std::string input;
    std::string method{"fast-lpm"};
    std::size_t poly_order{2};
    std::size_t dof{10};
    std::size_t warmup{0};
    std::string tag;
};

/// Drops the first `w` periods of every realization.
SignalEnsemble trim_periods(const SignalEnsemble& e, std::size_t w) {
    if (w == 0) return e;
    if (w >= e.periods()) {
        throw ConfigError("warm-up periods must leave at least one period");
    }
    SignalEnsemble out(e.realizations(), e.periods() - w, e.n_samples(), e.clock_freq());
    out.meta = e.meta;
    for (auto c : {Channel::reference, Channel::input, Channel::output}) {
        if (!e.has(c)) continue;
        std::vector<double> x;
        for (std::size_t m = 0; m < e.realizations(); ++m) {
            for (std::size_t p = w; p < e.periods(); ++p) {
                const auto s = e.period(c, m, p);
                x.insert(x.end(), s.begin(), s.end());
            }
        }
        out.set_channel(c, std::move(x));
    }
    return out;
}

double db10(double v) { return v > 0.0 ? 10.0 * std::log10(v) : -HUGE_VAL; }

void write_fig5(const Global& g, const std::string& stem, const BlaEstimate& est) {
    const auto& m      = est.meta;
    const bool  oracle = m.system == "paper-nfir" && m.params.count("alpha") != 0U && m.params.count("sigma_w") != 0U &&
                        m.params.count("input_power") != 0U && m.reference_power > 0.0;
    oracle::NfirParams p;
    double             divisor = 1.0;
    if (oracle) {
        p.alpha   = m.params.at("alpha");
        p.sigma_w = m.params.at("sigma_w");
        p.sigma_u = std::sqrt(m.params.at("input_power"));
        p.sigma_r = std::sqrt(m.reference_power);
        // variance of the averaged estimate: per-period formula over dof (or P) and M
        divisor = double(m.realizations) * (est.method == Method::fast_lpm ? double(m.lpm.dof) : double(m.periods));
    }
    std::ostringstream os;
    auto               prov = io::estimate_provenance(est);
    io::write_header(os, prov);
    os << "k,freq_hz,g_db,re,im,var_total,var_noise,var_nl,var_total_db,var_noise_db";
    if (oracle) os << ",true_db,true_re,true_im,var_pred,var_pred_db";
    os << '\n';
    for (std::size_t i = 0; i < est.size(); ++i) {
        os << est.bins[i] << ',' << io::num(est.freq[i]) << ',' << io::num(20.0 * std::log10(std::abs(est.g[i]))) << ','
           << io::num(est.g[i].real()) << ',' << io::num(est.g[i].imag()) << ',' << io::num(est.var_total[i]) << ','
           << io::num(est.var_noise[i]) << ',' << io::num(est.var_nl[i]) << ',' << io::num(db10(est.var_total[i])) << ','
           << io::num(db10(est.var_noise[i]));
        if (oracle) {
            const double w  = 2.0 * std::numbers::pi * est.freq[i] / m.clock_freq;
            const cplx   gt = oracle::nfir_bla_true(p, w);
            const double vp = oracle::nfir_bla_var_true(p, w) / divisor;
            os << ',' << io::num(20.0 * std::log10(std::abs(gt))) << ',' << io::num(gt.real()) << ',' << io::num(gt.imag())
               << ',' << io::num(vp) << ',' << io::num(db10(vp));
        }
        os << '\n';
    }
    io::write_file(out_path(g, stem, "csv"), os.str());
}

int cmd_estimate(const Global& g, const EstimateOpts& o) {
    const auto raw = io::load_ensemble(o.input);
    const auto e   = trim_periods(raw, o.warmup);
    const auto method = parse_method(o.method);
    LpmConfig  cfg{o.poly_order, o.dof};
    auto       est = estimate(e, method, cfg);
    if (est.size() == 0) {
        throw NumericError("no valid bins: every excited bin was excluded");
    }
    const json c{{"command", "estimate"}, {"method", o.method}, {"poly_order", o.poly_order}, {"dof", o.dof},
                 {"warmup_periods", o.warmup}, {"tag", o.tag}};
    est.meta.config_digest = config_digest(c, {o.input});
    if (e.has(Channel::input)) {
        double acc = 0.0;
        for (std::size_t m = 0; m < e.realizations(); ++m) acc += population_variance(e.realization(Channel::input, m));
        est.meta.params["input_power"] = acc / double(e.realizations());
    }
    const std::string suffix = o.tag.empty() ? "" : "_" + o.tag;
    save_estimate(g, "estimate" + suffix, est);
    write_fig5(g, "fig5" + suffix, est);
    std::size_t clipped = 0;
    for (auto f : est.flags) clipped += (f & bin_flag::clipped) != 0U ? 1 : 0;
    fmt::print("{}: {} bins, {} excluded, {} clipped, reference power {:.6g}\n", method_name(est.method), est.size(),
               est.excluded.size(), clipped, est.meta.reference_power);
    return 0;
}

// ---- detect ---------------------------------------------------------------------------------

int cmd_detect(const Global& g, const std::vector<std::string>& inputs, double z) {
    ExperimentSet xs;
    json          seeds = json::array();
    for (const auto& p : inputs) {
        auto est = io::load_estimate(p);
        seeds.push_back(est.meta.seed);
        xs.add(std::move(est), fs::path(p).filename().string());
    }
    const auto rep = classify_nonlinearity(xs, z);
    const auto dg  = config_digest(json{{"command", "detect"}, {"z", z}}, inputs);
    auto       j   = io::to_json(rep);
    j["provenance"] = {{"config_digest", dg}, {"seeds", seeds}};
    io::write_file(out_path(g, "detection", "json"), j.dump(1) + "\n");
    const auto text = render_report(rep);
    io::write_file(out_path(g, "detection", "txt"), fmt::format("# config_digest={}\n# seeds={}\n{}", dg, seeds.dump(), text));
    std::cout << text;
    return 0;
}

// ---- report ---------------------------------------------------------------------------------

int cmd_report(const std::vector<std::string>& inputs) {
    for (const auto& p : inputs) {
        const auto          est = io::load_estimate(p);
        std::vector<double> q;
        std::size_t         clipped = 0;
        for (std::size_t i = 0; i < est.size(); ++i) {
            if (est.var_noise[i] > 0.0) q.push_back(est.var_total[i] / est.var_noise[i]);
            clipped += (est.flags[i] & bin_flag::clipped) != 0U ? 1 : 0;
        }
        std::sort(q.begin(), q.end());
        fmt::print("{}\n  method {}, M = {}, P = {}, N = {}, system '{}', seed {}, digest {}\n", p, method_name(est.method),
                   est.meta.realizations, est.meta.periods, est.meta.n_samples, est.meta.system, est.meta.seed,
                   est.meta.config_digest);
        fmt::print("  bins {}, excluded {}, clipped {}, reference power {:.6g}\n", est.size(), est.excluded.size(), clipped,
                   est.meta.reference_power);
        if (!q.empty()) fmt::print("  median var_total / var_noise {:.4g}\n", q[q.size() / 2]);
        if (!est.detection.empty()) {
            fmt::print("  detection power: odd {:.4g}, even {:.4g}\n", detection_power(est, LineClass::odd),
                       detection_power(est, LineClass::even));
        }
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Best linear approximation toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    Global g;
    app.add_option("--seed", g.seed, "global seed");
    app.add_option("--out", g.out, "output directory");
    app.add_option("--format", g.format, "output format")->check(CLI::IsMember({"csv", "json"}));

    GenerateOpts go;
    auto*        gen = app.add_subcommand("generate", "design a multisine and realize M reference periods");
    gen->add_option("--preset", go.preset, "paper-sv: N=1024, full band, std 1, M=100");
    gen->add_option("--N", go.n, "samples per period");
    gen->add_option("--fs", go.fs, "clock frequency [Hz]");
    gen->add_option("--f-lo", go.f_lo, "lower band edge [Hz]");
    gen->add_option("--f-hi", go.f_hi, "upper band edge [Hz]");
    gen->add_option("--std", go.std_dev, "target std of one period");
    gen->add_option("--dc", go.dc, "DC value");
    gen->add_option("--grid", go.grid, "full | odd | odd-random");
    gen->add_option("--group", go.group, "odd-random: one harmonic left out per group");
    gen->add_option("--M", go.realizations, "realizations");
    gen->add_option("--excitation", go.excitation, "multisine | periodic-noise");

    SimulateOpts so;
    auto*        sim = app.add_subcommand("simulate", "drive the reference ensemble through a system");
    sim->add_option("--in", so.input, "reference ensemble")->required();
    sim->add_option("--preset", so.preset, "paper-nfir");
    sim->add_option("--system", so.system_file, "system JSON instead of the preset");
    sim->add_option("--alpha", so.alpha, "loop gain");
    sim->add_option("--sigma-w", so.sigma_w, "plant noise std");
    sim->add_option("--P", so.periods, "recorded periods");
    sim->add_option("--warmup-periods", so.warmup, "periods simulated and discarded first");
    sim->add_option("--noise-u", so.noise_u, "measurement noise std on u");
    sim->add_option("--noise-y", so.noise_y, "measurement noise std on y");

    EstimateOpts eo;
    auto*        est = app.add_subcommand("estimate", "BLA with noise and distortion variances");
    est->add_option("--in", eo.input, "simulated or imported ensemble")->required();
    est->add_option("--method", eo.method, "robust | fast | fast-lpm")->check(CLI::IsMember({"robust", "fast", "fast-lpm"}));
    est->add_option("--poly-order", eo.poly_order, "local polynomial order");
    est->add_option("--dof", eo.dof, "local polynomial degrees of freedom");
    est->add_option("--warmup-periods", eo.warmup, "leading periods dropped before estimation");
    est->add_option("--tag", eo.tag, "suffix for the output file names");

    std::vector<std::string> det_in;
    double                   z = 3.0;
    auto*                    det = app.add_subcommand("detect", "Type I / Type II classification");
    det->add_option("--in", det_in, "estimate files")->required();
    det->add_option("--z", z, "significance threshold");

    std::vector<std::string> rep_in;
    auto*                    rep = app.add_subcommand("report", "summary of estimate files");
    rep->add_option("--in", rep_in, "estimate files")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    if (go.preset == "paper-sv") {
        // explicit flags win over the preset
        if (gen->count("--N") == 0U) go.n = 1024;
        if (gen->count("--fs") == 0U) go.fs = 1.0;
        if (gen->count("--f-lo") == 0U) go.f_lo = 0.0;
        if (gen->count("--f-hi") == 0U) go.f_hi = 0.5;
        if (gen->count("--std") == 0U) go.std_dev = 1.0;
        if (gen->count("--M") == 0U) go.realizations = 100;
        if (gen->count("--grid") == 0U) go.grid = "full";
    }

    try {
        if (*gen) return cmd_generate(g, go);
        if (*sim) return cmd_simulate(g, so);
        if (*est) return cmd_estimate(g, eo);
        if (*det) return cmd_detect(g, det_in, z);
        if (*rep) return cmd_report(rep_in);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 3;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
