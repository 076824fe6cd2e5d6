#pragma once

// Text formats. JSON goes through nlohmann::json; CSV numbers use the shortest round-trip
// representation so files are byte-stable. CSV files start with "# key=value" provenance lines.

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <blatk/bla.hpp>
#include <blatk/detect.hpp>
#include <blatk/error.hpp>
#include <blatk/signals.hpp>
#include <blatk/spectra.hpp>
#include <blatk/volterra.hpp>

namespace blatk::io {

using json = nlohmann::json;

/// 64-bit FNV-1a, hex encoded.
inline std::string digest(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", h);
}

inline std::string num(double v) { return fmt::format("{}", v); }

using Provenance = std::vector<std::pair<std::string, std::string>>;

inline void write_header(std::ostream& os, const Provenance& prov) {
    for (const auto& [k, v] : prov) {
        os << "# " << k << '=' << v << '\n';
    }
}

/// Splits "# key=value" lines off the top of a CSV stream.
inline std::map<std::string, std::string> read_header(std::istream& is) {
    std::map<std::string, std::string> out;
    while (is.peek() == '#') {
        std::string line;
        std::getline(is, line);
        const auto eq = line.find('=');
        if (eq != std::string::npos && line.size() > 2) {
            out[line.substr(2, eq - 2)] = line.substr(eq + 1);
        }
    }
    return out;
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream        ss(line);
    std::string              cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
}

inline double to_double(const std::string& s) {
    try {
        std::size_t pos = 0;
        const double v  = std::stod(s, &pos);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("malformed number '" + s + "'");
    }
}

// ---- multisine ------------------------------------------------------------------------------

inline const char* phase_law_name(PhaseLaw p) {
    return p == PhaseLaw::uniform_random ? "uniform_random" : "deterministic_debug";
}

inline PhaseLaw parse_phase_law(const std::string& s) {
    if (s == "uniform_random") return PhaseLaw::uniform_random;
    if (s == "deterministic_debug") return PhaseLaw::deterministic_debug;
    throw ConfigError("unknown phase law '" + s + "'");
}

inline json to_json(const MultisineSpec& spec, std::uint64_t seed) {
    json h = json::array();
    for (auto k : spec.excited) {
        h.push_back({{"k", k}, {"amp", spec.amp_grid[k]}});
    }
    return {{"n_samples", spec.n_samples}, {"clock_freq_hz", spec.clock_freq}, {"dc", spec.dc_value},
            {"harmonics", h},           {"phase_law", phase_law_name(spec.phase_law)}, {"seed", seed}};
}

inline MultisineSpec multisine_from_json(const json& j, std::uint64_t* seed = nullptr) {
    try {
        const auto          n = j.at("n_samples").get<std::size_t>();
        std::vector<double> amps(n / 2, 0.0);
        for (const auto& h : j.at("harmonics")) {
            const auto k = h.at("k").get<std::size_t>();
            if (k == 0 || k >= amps.size()) {
                throw ConfigError("multisine: harmonic index out of range");
            }
            amps[k] = h.at("amp").get<double>();
        }
        if (seed != nullptr) *seed = j.value("seed", std::uint64_t{0});
        return make_multisine_spec(n, j.at("clock_freq_hz").get<double>(), std::move(amps), j.value("dc", 0.0),
                                   parse_phase_law(j.value("phase_law", std::string("uniform_random"))));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("multisine json: ") + e.what());
    }
}

inline void write_signal_csv(std::ostream& os, const PeriodicSignal& s, const Provenance& prov = {}) {
    write_header(os, prov);
    os << "t_index,value\n";
    for (std::size_t t = 0; t < s.samples.size(); ++t) {
        os << t << ',' << num(s.samples[t]) << '\n';
    }
}

inline void write_spectrum_csv(std::ostream& os, const Spectrum& s, const Provenance& prov = {}) {
    write_header(os, prov);
    os << "k,freq_hz,re,im\n";
    for (std::size_t k = 0; k < s.size(); ++k) {
        os << k << ',' << num(s.freq(k)) << ',' << num(s.bins[k].real()) << ',' << num(s.bins[k].imag()) << '\n';
    }
}

// ---- ensembles ------------------------------------------------------------------------------

inline json meta_json(const EnsembleMeta& m) {
    return {{"seed", m.seed}, {"config_digest", m.config_digest}, {"system", m.system}, {"params", m.params},
            {"excited", m.excited}};
}

inline EnsembleMeta meta_from_json(const json& j) {
    EnsembleMeta m;
    m.seed          = j.value("seed", std::uint64_t{0});
    m.config_digest = j.value("config_digest", std::string());
    m.system        = j.value("system", std::string());
    if (j.contains("params")) m.params = j.at("params").get<std::map<std::string, double>>();
    if (j.contains("excited")) m.excited = j.at("excited").get<std::vector<std::size_t>>();
    return m;
}

/// channel -> [M][P][N]
inline json to_json(const SignalEnsemble& e) {
    json channels = json::object();
    for (auto c : {Channel::reference, Channel::input, Channel::output}) {
        if (!e.has(c)) continue;
        json rs = json::array();
        for (std::size_t m = 0; m < e.realizations(); ++m) {
            json ps = json::array();
            for (std::size_t p = 0; p < e.periods(); ++p) {
                const auto x = e.period(c, m, p);
                ps.push_back(std::vector<double>(x.begin(), x.end()));
            }
            rs.push_back(std::move(ps));
        }
        channels[channel_name(c)] = std::move(rs);
    }
    return {{"format", "blatk-ensemble"}, {"realizations", e.realizations()}, {"periods", e.periods()},
            {"n_samples", e.n_samples()},  {"clock_freq_hz", e.clock_freq()}, {"meta", meta_json(e.meta)},
            {"channels", std::move(channels)}};
}

inline SignalEnsemble ensemble_from_json(const json& j) {
    try {
        SignalEnsemble e(j.at("realizations").get<std::size_t>(), j.at("periods").get<std::size_t>(),
                         j.at("n_samples").get<std::size_t>(), j.at("clock_freq_hz").get<double>());
        if (j.contains("meta")) e.meta = meta_from_json(j.at("meta"));
        for (const auto& [name, rs] : j.at("channels").items()) {
            std::vector<double> flat;
            flat.reserve(e.realizations() * e.periods() * e.n_samples());
            if (rs.size() != e.realizations()) throw ConfigError("ensemble json: wrong realization count");
            for (const auto& ps : rs) {
                if (ps.size() != e.periods()) throw ConfigError("ensemble json: wrong period count");
                for (const auto& x : ps) {
                    if (x.size() != e.n_samples()) throw ConfigError("ensemble json: wrong period length");
                    for (const auto& v : x) flat.push_back(v.get<double>());
                }
            }
            e.set_channel(parse_channel(name), std::move(flat));
        }
        return e;
    } catch (const json::exception& ex) {
        throw ConfigError(std::string("ensemble json: ") + ex.what());
    }
}

/// Long CSV: realization,period,t_index,<one column per channel present>.
inline void write_ensemble_csv(std::ostream& os, const SignalEnsemble& e) {
    Provenance prov{{"format", "blatk-ensemble"},
                    {"realizations", std::to_string(e.realizations())},
                    {"periods", std::to_string(e.periods())},
                    {"n_samples", std::to_string(e.n_samples())},
                    {"clock_freq_hz", num(e.clock_freq())},
                    {"meta", meta_json(e.meta).dump()}};
    write_header(os, prov);
    std::vector<Channel> cs;
    os << "realization,period,t_index";
    for (auto c : {Channel::reference, Channel::input, Channel::output}) {
        if (e.has(c)) {
            cs.push_back(c);
            os << ',' << channel_name(c);
        }
    }
    os << '\n';
    for (std::size_t m = 0; m < e.realizations(); ++m) {
        for (std::size_t p = 0; p < e.periods(); ++p) {
            for (std::size_t t = 0; t < e.n_samples(); ++t) {
                os << m << ',' << p << ',' << t;
                for (auto c : cs) os << ',' << num(e.period(c, m, p)[t]);
                os << '\n';
            }
        }
    }
}

inline SignalEnsemble ensemble_from_csv(std::istream& is) {
    const auto hdr = read_header(is);
    const auto get = [&](const char* key) -> const std::string& {
        const auto it = hdr.find(key);
        if (it == hdr.end()) throw ConfigError(std::string("ensemble csv: missing header '") + key + "'");
        return it->second;
    };
    SignalEnsemble e(std::stoul(get("realizations")), std::stoul(get("periods")), std::stoul(get("n_samples")),
                     to_double(get("clock_freq_hz")));
    if (hdr.count("meta") != 0U) e.meta = meta_from_json(json::parse(hdr.at("meta")));
    std::string line;
    std::getline(is, line);
    const auto           cols = split_csv(line);
    std::vector<Channel> cs;
    for (std::size_t i = 3; i < cols.size(); ++i) cs.push_back(parse_channel(cols[i]));
    const std::size_t                total = e.realizations() * e.periods() * e.n_samples();
    std::vector<std::vector<double>> data(cs.size());
    for (auto& d : data) d.reserve(total);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != 3 + cs.size()) throw ConfigError("ensemble csv: ragged row");
        for (std::size_t i = 0; i < cs.size(); ++i) data[i].push_back(to_double(cells[3 + i]));
    }
    for (std::size_t i = 0; i < cs.size(); ++i) e.set_channel(cs[i], std::move(data[i]));
    return e;
}

// ---- estimates ------------------------------------------------------------------------------

inline json to_json(const BlaEstimate& est) {
    json bins = json::array();
    for (std::size_t i = 0; i < est.size(); ++i) {
        bins.push_back({{"k", est.bins[i]},
                        {"freq_hz", est.freq[i]},
                        {"re", est.g[i].real()},
                        {"im", est.g[i].imag()},
                        {"var_noise", est.var_noise[i]},
                        {"var_total", est.var_total[i]},
                        {"var_nl", est.var_nl[i]},
                        {"flags", est.flags[i]},
                        {"dof_total", est.dof_total[i]},
                        {"dof_noise", est.dof_noise[i]}});
    }
    json lines = json::array();
    for (const auto& d : est.detection) {
        lines.push_back({{"k", d.k}, {"class", d.cls == LineClass::odd ? "odd" : "even"}, {"power", d.power}});
    }
    const auto& m = est.meta;
    return {{"format", "blatk-bla"},
            {"method", method_name(est.method)},
            {"meta",
             {{"realizations", m.realizations},
              {"periods", m.periods},
              {"n_samples", m.n_samples},
              {"clock_freq_hz", m.clock_freq},
              {"reference_power", m.reference_power},
              {"system", m.system},
              {"params", m.params},
              {"seed", m.seed},
              {"config_digest", m.config_digest},
              {"averaged", m.averaged},
              {"poly_order", m.lpm.poly_order},
              {"dof", m.lpm.dof}}},
            {"bins", std::move(bins)},
            {"excluded", est.excluded},
            {"detection_lines", std::move(lines)}};
}

inline BlaEstimate estimate_from_json(const json& j) {
    try {
        BlaEstimate est;
        est.method               = parse_method(j.at("method").get<std::string>());
        const auto& m            = j.at("meta");
        est.meta.realizations    = m.at("realizations").get<std::size_t>();
        est.meta.periods         = m.at("periods").get<std::size_t>();
        est.meta.n_samples       = m.at("n_samples").get<std::size_t>();
        est.meta.clock_freq      = m.at("clock_freq_hz").get<double>();
        est.meta.reference_power = m.at("reference_power").get<double>();
        est.meta.system          = m.value("system", std::string());
        if (m.contains("params")) est.meta.params = m.at("params").get<std::map<std::string, double>>();
        est.meta.seed          = m.value("seed", std::uint64_t{0});
        est.meta.config_digest = m.value("config_digest", std::string());
        est.meta.averaged      = m.value("averaged", std::size_t{0});
        est.meta.lpm.poly_order = m.value("poly_order", std::size_t{2});
        est.meta.lpm.dof        = m.value("dof", std::size_t{10});
        for (const auto& b : j.at("bins")) {
            est.bins.push_back(b.at("k").get<std::size_t>());
            est.freq.push_back(b.at("freq_hz").get<double>());
            est.g.emplace_back(b.at("re").get<double>(), b.at("im").get<double>());
            est.var_noise.push_back(b.at("var_noise").get<double>());
            est.var_total.push_back(b.at("var_total").get<double>());
            est.var_nl.push_back(b.at("var_nl").get<double>());
            est.flags.push_back(b.at("flags").get<unsigned>());
            est.dof_total.push_back(b.at("dof_total").get<double>());
            est.dof_noise.push_back(b.at("dof_noise").get<double>());
        }
        if (j.contains("excluded")) est.excluded = j.at("excluded").get<std::vector<std::size_t>>();
        if (j.contains("detection_lines")) {
            for (const auto& d : j.at("detection_lines")) {
                est.detection.push_back({d.at("k").get<std::size_t>(),
                                         d.at("class").get<std::string>() == "odd" ? LineClass::odd : LineClass::even,
                                         d.at("power").get<double>()});
            }
        }
        return est;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("estimate json: ") + e.what());
    }
}

inline Provenance estimate_provenance(const BlaEstimate& est) {
    const auto& m = est.meta;
    return {{"format", "blatk-bla"},
            {"method", method_name(est.method)},
            {"realizations", std::to_string(m.realizations)},
            {"periods", std::to_string(m.periods)},
            {"n_samples", std::to_string(m.n_samples)},
            {"clock_freq_hz", num(m.clock_freq)},
            {"reference_power", num(m.reference_power)},
            {"system", m.system},
            {"params", json(m.params).dump()},
            {"seed", std::to_string(m.seed)},
            {"config_digest", m.config_digest},
            {"averaged", std::to_string(m.averaged)},
            {"poly_order", std::to_string(m.lpm.poly_order)},
            {"dof", std::to_string(m.lpm.dof)}};
}

inline void write_estimate_csv(std::ostream& os, const BlaEstimate& est) {
    write_header(os, estimate_provenance(est));
    os << "k,freq_hz,re,im,var_noise,var_total,var_nl,flags,dof_total,dof_noise\n";
    for (std::size_t i = 0; i < est.size(); ++i) {
        os << est.bins[i] << ',' << num(est.freq[i]) << ',' << num(est.g[i].real()) << ',' << num(est.g[i].imag())
           << ',' << num(est.var_noise[i]) << ',' << num(est.var_total[i]) << ',' << num(est.var_nl[i]) << ','
           << est.flags[i] << ',' << num(est.dof_total[i]) << ',' << num(est.dof_noise[i]) << '\n';
    }
}

inline BlaEstimate estimate_from_csv(std::istream& is) {
    const auto hdr = read_header(is);
    const auto get = [&](const char* key, const char* fallback) {
        const auto it = hdr.find(key);
        return it == hdr.end() ? std::string(fallback) : it->second;
    };
    BlaEstimate est;
    est.method               = parse_method(get("method", "robust"));
    est.meta.realizations    = std::stoul(get("realizations", "0"));
    est.meta.periods         = std::stoul(get("periods", "0"));
    est.meta.n_samples       = std::stoul(get("n_samples", "0"));
    est.meta.clock_freq      = to_double(get("clock_freq_hz", "1"));
    est.meta.reference_power = to_double(get("reference_power", "0"));
    est.meta.system          = get("system", "");
    est.meta.params          = json::parse(get("params", "{}")).get<std::map<std::string, double>>();
    est.meta.seed            = std::stoull(get("seed", "0"));
    est.meta.config_digest   = get("config_digest", "");
    est.meta.averaged        = std::stoul(get("averaged", "0"));
    est.meta.lpm.poly_order  = std::stoul(get("poly_order", "2"));
    est.meta.lpm.dof         = std::stoul(get("dof", "10"));
    std::string line;
    std::getline(is, line); // column names
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto c = split_csv(line);
        if (c.size() != 10) throw ConfigError("estimate csv: expected 10 columns");
        est.bins.push_back(std::stoul(c[0]));
        est.freq.push_back(to_double(c[1]));
        est.g.emplace_back(to_double(c[2]), to_double(c[3]));
        est.var_noise.push_back(to_double(c[4]));
        est.var_total.push_back(to_double(c[5]));
        est.var_nl.push_back(to_double(c[6]));
        est.flags.push_back(static_cast<unsigned>(std::stoul(c[7])));
        est.dof_total.push_back(to_double(c[8]));
        est.dof_noise.push_back(to_double(c[9]));
    }
    return est;
}

// ---- detection ------------------------------------------------------------------------------

inline json to_json(const DetectionReport& r) {
    const auto verdict = [](const Verdict& v) { return json{{"value", v.value}, {"score", v.score}}; };
    json       bins    = json::array();
    for (const auto& b : r.bins) {
        bins.push_back({{"k", b.k},
                        {"weight", b.weight},
                        {"z_bla", b.z_bla},
                        {"z_nl", b.z_nl},
                        {"noise_evaluable", b.noise_evaluable},
                        {"slope", b.slope},
                        {"slope_se", b.slope_se}});
    }
    return {{"format", "blatk-detection"},
            {"powers", r.powers},
            {"thresholds", {{"z", r.z_threshold}, {"slope_band_se", r.slope_band}}},
            {"bla_changed", verdict(r.bla_changed)},
            {"var_nl_changed", verdict(r.var_nl_changed)},
            {"var_noise_inverse_power", verdict(r.var_noise_inverse_power)},
            {"var_noise_measured_on", "FRF noise variance"},
            {"noise_evaluable", r.noise_evaluable},
            {"nl_present", r.nl_present},
            {"type_i", type_i_name(r.type_i)},
            {"type_ii", r.type_ii ? "yes" : "no"},
            {"linear_hypothesis", r.linear_consistent ? "consistent" : "rejected"},
            {"bins", std::move(bins)}};
}

// ---- systems --------------------------------------------------------------------------------

inline json kernel_json(const VolterraKernel& k) {
    json j;
    j["degree"] = k.degree();
    j["domain"] = k.domain() == TimeDomain::discrete ? "discrete" : "continuous";
    std::visit(
        [&](const auto& f) {
            using T = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<T, std::vector<NfirTerm>>) {
                j["form"] = "nfir";
                json taps = json::array();
                for (const auto& t : f) {
                    taps.push_back({{"coeff", t.coeff}, {"signal_lags", t.signal_lags}, {"noise_lags", t.noise_lags}});
                }
                j["taps"] = std::move(taps);
            } else if constexpr (std::is_same_v<T, DenseGrid>) {
                j["form"]   = "dense";
                j["extent"] = f.extent;
                j["step"]   = f.step;
                j["grid"]   = f.values;
            } else {
                j["form"] = "separable";
                j["gain"] = f.gain;
                j["step"] = f.step;
                j["axes"] = f.axes;
            }
        },
        k.form());
    return j;
}

inline VolterraKernel kernel_from_json(const json& j) {
    const auto form   = j.at("form").get<std::string>();
    const auto domain = j.value("domain", std::string("discrete")) == "continuous" ? TimeDomain::continuous
                                                                                   : TimeDomain::discrete;
    if (form == "nfir") {
        std::vector<NfirTerm> terms;
        for (const auto& t : j.at("taps")) {
            terms.push_back({t.at("coeff").get<double>(), t.value("signal_lags", std::vector<std::size_t>{}),
                             t.value("noise_lags", std::vector<std::size_t>{})});
        }
        return VolterraKernel::nfir(std::move(terms));
    }
    if (form == "dense") {
        return VolterraKernel::dense({j.at("degree").get<std::size_t>(), j.at("extent").get<std::size_t>(),
                                      j.value("step", 1.0), j.at("grid").get<std::vector<double>>()},
                                     domain);
    }
    if (form == "separable") {
        return VolterraKernel::separable(
            {j.value("gain", 1.0), j.value("step", 1.0), j.at("axes").get<std::vector<std::vector<double>>>()}, domain);
    }
    throw ConfigError("unknown kernel form '" + form + "'");
}

inline json to_json(const FeedbackSystemSpec& s) {
    const auto block = [](const KernelSet& set) {
        json a = json::array();
        for (const auto& k : set) a.push_back(kernel_json(k));
        return a;
    };
    json j{{"name", s.name}, {"loop_gain", s.loop_gain}, {"plant", block(s.plant)}};
    if (s.actuator) j["actuator"] = block(*s.actuator);
    if (s.feedback) j["feedback"] = block(*s.feedback);
    return j;
}

inline FeedbackSystemSpec system_from_json(const json& j) {
    try {
        const auto block = [](const json& a) {
            KernelSet set;
            for (const auto& k : a) set.push_back(kernel_from_json(k));
            return set;
        };
        FeedbackSystemSpec s;
        s.name      = j.value("name", std::string());
        s.loop_gain = j.value("loop_gain", 0.0);
        s.plant     = block(j.at("plant"));
        if (j.contains("actuator")) s.actuator = block(j.at("actuator"));
        if (j.contains("feedback")) s.feedback = block(j.at("feedback"));
        s.validate();
        return s;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("system json: ") + e.what());
    }
}

// ---- files ----------------------------------------------------------------------------------

inline std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write '" + path + "'");
    os << text;
    if (!os) throw ConfigError("write failed for '" + path + "'");
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// By extension: .json or CSV.
inline SignalEnsemble load_ensemble(const std::string& path) {
    const auto text = read_file(path);
    if (ends_with(path, ".json")) return ensemble_from_json(json::parse(text));
    std::istringstream is(text);
    return ensemble_from_csv(is);
}

inline BlaEstimate load_estimate(const std::string& path) {
    const auto text = read_file(path);
    if (ends_with(path, ".json")) return estimate_from_json(json::parse(text));
    std::istringstream is(text);
    return estimate_from_csv(is);
}

} // namespace blatk::io
