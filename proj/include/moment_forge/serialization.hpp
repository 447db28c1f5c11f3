#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "bump_model.hpp"
#include "error.hpp"
#include "network_export.hpp"
#include "ode_flow.hpp"
#include "sq_harness.hpp"
#include "stat_verify.hpp"

namespace moment_forge {

using json = nlohmann::ordered_json;

inline constexpr const char* schema_id = "moment-forge/1";

/// Shortest decimal string that parses back to the same double.
inline std::string format_real(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, x);
    return {buf, r.ptr};
}

inline double parse_real(const json& j, const std::string& what = "real") {
    if (j.is_number()) return j.get<double>();
    if (!j.is_string()) throw ValidationError("malformed file: " + what + " is not a real");
    const auto s = j.get<std::string>();
    if (s == "nan") return NAN;
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    double x = 0.0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), x);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw ValidationError("malformed file: cannot parse " + what + " '" + s + "'");
    return x;
}

inline json reals(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(format_real(x));
    return a;
}

inline std::vector<double> parse_reals(const json& j, const std::string& what) {
    if (!j.is_array()) throw ValidationError("malformed file: " + what + " is not an array");
    std::vector<double> v;
    for (const auto& x : j) v.push_back(parse_real(x, what));
    return v;
}

namespace detail {

inline const json& field(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) throw ValidationError(std::string("malformed file: missing field '") + key + "'");
    return j.at(key);
}

inline void check_schema(const json& j, const std::string& kind) {
    if (!j.is_object() || !j.contains("schema") || j.at("schema") != schema_id)
        throw ValidationError(std::string("unsupported file: expected schema ") + schema_id);
    if (field(j, "kind") != kind)
        throw ValidationError("unexpected file kind '" + field(j, "kind").get<std::string>() + "', expected '" + kind + "'");
}

}  // namespace detail

// ---- files ----

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("read failed on '" + path + "'");
    return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << text;
    out.flush();
    if (!out) throw IoError("write failed on '" + path + "'");
}

inline json parse_json(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError("malformed JSON in " + origin + ": " + e.what());
    }
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---- instances ----

struct BuildRecord {
    ReducedRule rule;
    BumpInstance initial;
    EvolveResult evolved;
    double sigma = 0.05;
    SlopeTarget target;
    std::uint64_t seed = 1;
};

inline json trace_to_json(const EvolutionTrace& t) {
    json j;
    j["status"] = t.status();
    j["stop_reason"] = t.stop_reason;
    j["achieved_T"] = format_real(t.achieved_T);
    j["rejected_steps"] = t.rejected_steps;
    j["projected"] = t.projected;
    j["residual_before_projection"] = format_real(t.residual_before_projection);
    j["residual_after_projection"] = format_real(t.residual_after_projection);
    j["projection_iterations"] = t.projection_iterations;
    j["times"] = reals(t.times);
    j["eps"] = reals(t.eps_values);
    j["sigma_min"] = reals(t.sigma_mins);
    j["direction_norm"] = reals(t.direction_norms);
    j["odd_moment_max"] = reals(t.odd_moment_max);
    j["step_sizes"] = reals(t.step_sizes);
    json h = json::array(), r = json::array();
    for (const auto& x : t.heights) h.push_back(reals(x));
    for (const auto& x : t.moment_residuals) r.push_back(reals(x));
    j["heights"] = h;
    j["moment_residuals"] = r;
    return j;
}

inline EvolutionTrace trace_from_json(const json& j) {
    using detail::field;
    EvolutionTrace t;
    t.target_reached = field(j, "status") == "reached";
    t.stop_reason = field(j, "stop_reason").get<std::string>();
    t.achieved_T = parse_real(field(j, "achieved_T"), "achieved_T");
    t.rejected_steps = field(j, "rejected_steps").get<int>();
    t.projected = field(j, "projected").get<bool>();
    t.residual_before_projection = parse_real(field(j, "residual_before_projection"));
    t.residual_after_projection = parse_real(field(j, "residual_after_projection"));
    t.projection_iterations = field(j, "projection_iterations").get<int>();
    t.times = parse_reals(field(j, "times"), "times");
    t.eps_values = parse_reals(field(j, "eps"), "eps");
    t.sigma_mins = parse_reals(field(j, "sigma_min"), "sigma_min");
    t.direction_norms = parse_reals(field(j, "direction_norm"), "direction_norm");
    t.odd_moment_max = parse_reals(field(j, "odd_moment_max"), "odd_moment_max");
    t.step_sizes = parse_reals(field(j, "step_sizes"), "step_sizes");
    for (const auto& x : field(j, "heights")) t.heights.push_back(parse_reals(x, "heights"));
    for (const auto& x : field(j, "moment_residuals")) t.moment_residuals.push_back(parse_reals(x, "moment_residuals"));
    return t;
}

inline json build_to_json(const BuildRecord& b) {
    const auto& ini = b.initial;
    const auto& fin = b.evolved.instance;
    json j;
    j["schema"] = schema_id;
    j["kind"] = "instance";
    j["config"] = {{"m", ini.m},
                   {"nu", format_real(ini.nu)},
                   {"sigma", format_real(b.sigma)},
                   {"eps0", format_real(ini.eps)},
                   {"target", b.target.kind == SlopeTarget::Kind::eps ? "eps" : "slope"},
                   {"target_value", format_real(b.target.value)},
                   {"seed", b.seed}};
    j["rule"] = {{"m", b.rule.m},
                 {"nodes", reals(b.rule.nodes)},
                 {"weights", reals(b.rule.weights)},
                 {"gap_mass", format_real(b.rule.gap_mass)}};
    j["layout"] = {{"centers", reals(ini.centers)},
                   {"half_widths", reals(ini.half_widths)},
                   {"plateau_weights", reals(ini.plateau_weights)},
                   {"gap_mass", format_real(ini.gap_mass)}};
    j["initial"] = {{"eps", format_real(ini.eps)}, {"heights", reals(ini.heights)}};
    j["evolved"] = {{"eps", format_real(fin.eps)},
                    {"heights", reals(fin.heights)},
                    {"max_slope", format_real(fin.max_slope())}};
    j["trace"] = trace_to_json(b.evolved.trace);
    return j;
}

/// Parse and revalidate; a broken invariant raises ValidationError naming it.
inline BuildRecord build_from_json(const json& j) {
    using detail::field;
    detail::check_schema(j, "instance");
    BuildRecord b;
    const auto& cfg = field(j, "config");
    const auto& rule = field(j, "rule");
    const auto& lay = field(j, "layout");
    b.rule.m = field(rule, "m").get<int>();
    b.rule.nodes = parse_reals(field(rule, "nodes"), "rule.nodes");
    b.rule.weights = parse_reals(field(rule, "weights"), "rule.weights");
    b.rule.gap_mass = parse_real(field(rule, "gap_mass"), "rule.gap_mass");
    b.sigma = parse_real(field(cfg, "sigma"), "sigma");
    b.target.kind = field(cfg, "target") == "eps" ? SlopeTarget::Kind::eps : SlopeTarget::Kind::slope;
    b.target.value = parse_real(field(cfg, "target_value"), "target_value");
    b.seed = field(cfg, "seed").get<std::uint64_t>();

    BumpInstance base;
    base.m = field(cfg, "m").get<int>();
    base.nu = parse_real(field(cfg, "nu"), "nu");
    base.centers = parse_reals(field(lay, "centers"), "centers");
    base.half_widths = parse_reals(field(lay, "half_widths"), "half_widths");
    base.plateau_weights = parse_reals(field(lay, "plateau_weights"), "plateau_weights");
    base.gap_mass = parse_real(field(lay, "gap_mass"), "gap_mass");
    const std::size_t n = base.centers.size();
    if (base.half_widths.size() != n || base.plateau_weights.size() != n)
        throw ValidationError("malformed instance: layout arrays differ in length");

    b.initial = base;
    b.initial.eps = parse_real(field(field(j, "initial"), "eps"), "initial.eps");
    b.initial.heights = parse_reals(field(field(j, "initial"), "heights"), "initial.heights");
    b.evolved.instance = base;
    b.evolved.instance.eps = parse_real(field(field(j, "evolved"), "eps"), "evolved.eps");
    b.evolved.instance.heights = parse_reals(field(field(j, "evolved"), "heights"), "evolved.heights");
    b.evolved.trace = trace_from_json(field(j, "trace"));
    if (b.initial.heights.size() != n || b.evolved.instance.heights.size() != n)
        throw ValidationError("malformed instance: height arrays differ in length from the layout");
    b.initial.validate();
    b.evolved.instance.validate();
    return b;
}

inline BuildRecord load_build(const std::string& path) { return build_from_json(parse_json(read_text(path), path)); }

// ---- networks ----

inline json network_to_json(const ReluNetwork& net) {
    json j;
    j["schema"] = schema_id;
    j["kind"] = "relu1d";
    j["input_dim"] = net.input_dim;
    j["weight_bound"] = format_real(net.weight_bound());
    json units = json::array();
    for (const auto& u : net.units) units.push_back({{"s", u.sign}, {"w", reals(u.weights)}, {"b", format_real(u.bias)}});
    j["units"] = units;
    j["linear"] = reals(net.linear);
    return j;
}

inline ReluNetwork network_from_json_body(const json& j) {
    using detail::field;
    ReluNetwork net;
    net.input_dim = field(j, "input_dim").get<std::size_t>();
    for (const auto& u : field(j, "units")) {
        ReluUnit r;
        r.sign = field(u, "s").get<int>();
        r.weights = parse_reals(field(u, "w"), "unit weights");
        r.bias = parse_real(field(u, "b"), "unit bias");
        net.units.push_back(std::move(r));
    }
    net.linear = parse_reals(field(j, "linear"), "linear");
    net.validate();
    return net;
}

inline ReluNetwork network_from_json(const json& j) {
    detail::check_schema(j, "relu1d");
    return network_from_json_body(j);
}

inline json lifted_to_json(const LiftedNetwork& L) {
    json j;
    j["schema"] = schema_id;
    j["kind"] = "lifted";
    j["d"] = L.d;
    j["sigma"] = format_real(L.sigma);
    j["duplicate"] = L.duplicate;
    j["v"] = reals(L.v);
    j["relu_units"] = L.relu_units();
    json inner = network_to_json(L.inner);
    inner.erase("schema");
    j["inner"] = inner;
    return j;
}

inline LiftedNetwork lifted_from_json(const json& j) {
    using detail::field;
    detail::check_schema(j, "lifted");
    const auto inner = network_from_json_body(field(j, "inner"));
    return lift(inner, parse_real(field(j, "sigma"), "sigma"), field(j, "d").get<std::size_t>(),
                parse_reals(field(j, "v"), "v"), field(j, "duplicate").get<int>());
}

// ---- reports ----

inline json bound_check_json(const BoundCheck& b) {
    json j = {{"cosine", format_real(b.cosine)},
              {"value", format_real(b.value)},
              {"bound", format_real(b.bound)},
              {"margin", format_real(b.margin)},
              {"error_estimate", format_real(b.error_estimate)},
              {"pass", b.pass}};
    if (!b.error.empty()) j["error"] = b.error;
    return j;
}

inline json report_to_json(const VerificationReport& r) {
    const auto& c = r.config;
    json j;
    j["schema"] = schema_id;
    j["kind"] = "report";
    j["config"] = {{"sigma", format_real(c.sigma)},
                   {"nu", format_real(c.nu)},
                   {"slope_target", format_real(c.slope_target)},
                   {"correlation_cosines", reals(c.correlation_cosines)},
                   {"tv_cosines", reals(c.tv_cosines)},
                   {"tv_slack", format_real(c.tv_slack)},
                   {"correlation_tol", format_real(c.correlation_tol)},
                   {"tv_tol", format_real(c.tv_tol)},
                   {"w1_samples", c.w1_samples},
                   {"w1_constant", format_real(c.w1_constant)},
                   {"support_sigma", format_real(c.support_sigma)},
                   {"support_cosine", format_real(c.support_cosine)},
                   {"support_c", format_real(c.support_c)},
                   {"support_min_probability", format_real(c.support_min_probability)},
                   {"support_samples", c.support_samples},
                   {"vandermonde_c", format_real(c.vandermonde_c)},
                   {"chi_reference_c", format_real(c.chi_reference_c)},
                   {"seed", c.seed}};
    j["m"] = r.m;
    j["eps0"] = format_real(r.eps0);
    j["epsT"] = format_real(r.epsT);
    j["achieved_T"] = format_real(r.achieved_T);
    j["moments"] = {{"errors", reals(r.moment_errors)},
                    {"latent_errors", reals(r.latent_moment_errors)},
                    {"plateau_errors", reals(r.plateau_moment_errors)},
                    {"pass", r.moments_pass}};
    j["network"] = {{"size", r.network_size},
                    {"weight_bound", format_real(r.weight_bound)},
                    {"weight_bound_formula", format_real(r.weight_bound_formula)},
                    {"max_deviation", format_real(r.network_max_deviation)},
                    {"slope_max", format_real(r.slope_max)},
                    {"slope_pass", r.slope_pass},
                    {"pass", r.network_pass}};
    j["chi_squared"] = {{"value", format_real(r.chi_squared)}, {"reference", format_real(r.chi_reference)}};
    json pc = json::array(), tv = json::array();
    for (const auto& b : r.pairwise_corr) pc.push_back(bound_check_json(b));
    for (const auto& b : r.tv_separation) tv.push_back(bound_check_json(b));
    j["pairwise_correlation"] = pc;
    j["tv_separation"] = tv;
    j["w1"] = {{"value", format_real(r.w1_d0_dT)},
               {"bound", format_real(r.w1_bound)},
               {"max_height_drift", format_real(r.max_height_drift)},
               {"pass", r.w1_pass}};
    j["distance_to_support"] = {{"cosine", format_real(r.support.cosine)},
                                {"threshold", format_real(r.support.threshold)},
                                {"exceed_probability", format_real(r.support.exceed_probability)},
                                {"w1_lower_bound", format_real(r.support.w1_lower_bound)},
                                {"n", r.support.n},
                                {"pass", r.support_pass}};
    j["sigma_min"] = {{"initial", format_real(r.sigma_min_initial)},
                      {"final", format_real(r.sigma_min_final)},
                      {"min", format_real(r.sigma_min_min)},
                      {"max", format_real(r.sigma_min_max)}};
    j["vandermonde"] = {{"actual", format_real(r.vandermonde.actual)},
                        {"lower_bound", format_real(r.vandermonde.lower_bound)},
                        {"separation", format_real(r.vandermonde.separation)},
                        {"meets_bound", r.vandermonde.meets_bound}};
    j["errors"] = r.errors;
    j["all_pass"] = r.all_pass();
    return j;
}

// ---- experiments ----

inline json distinguisher_to_json(const DistinguisherResult& r) {
    return {{"algorithm", r.algorithm},
            {"decision", r.decision},
            {"advantage", format_real(r.advantage)},
            {"queries_used", r.queries_used},
            {"trials", r.trials},
            {"yes_planted", r.yes_planted},
            {"yes_null", r.yes_null},
            {"identical_answer_trials", r.identical_answer_trials},
            {"max_answer_gap", format_real(r.max_answer_gap)},
            {"d", r.d},
            {"tau", format_real(r.tau)},
            {"mode", r.mode}};
}

}  // namespace moment_forge
