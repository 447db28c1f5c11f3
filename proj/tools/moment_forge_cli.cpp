#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include <moment_forge/moment_forge.hpp>

using namespace moment_forge;

namespace {

struct BuildArgs {
    int m = 5;
    double nu = 1e-4;
    double sigma = 0.05;
    double eps0 = 1e-6;
    std::optional<double> slope_target, eps_target;
    std::uint64_t seed = 1;
    double atol = 1e-10, rtol = 1e-10, sigma_floor = 1e-12;
    std::string out = "instance.json";
};

struct VerifyArgs {
    std::string in;
    std::string out = "report.json";
    std::uint64_t seed = 1;
    std::size_t n = 1000000;
};

struct ExportArgs {
    std::string in;
    std::size_t d = 0;
    std::string v = "e1";
    std::uint64_t seed = 1;
    int duplicate = 1;
    std::string out = "network.json";
};

struct SampleArgs {
    std::string in;
    std::size_t n = 1000;
    std::string hypothesis = "planted";
    std::size_t d = 0;
    std::uint64_t seed = 1;
    std::string out = "-";
};

struct DistinguishArgs {
    std::string in;
    std::string algo = "all";
    std::string mode = "honest";
    std::size_t d = 20;
    double tau = 0.01;
    std::size_t trials = 100;
    std::size_t directions = 20;
    std::size_t n = 20000;  // high-precision sampling budget for adversarial answers
    std::uint64_t seed = 1;
    std::string out = "experiment.json";
};

template <class F>
auto stage(const std::string& name, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const NumericGuardError& e) {
        throw NumericGuardError("stage " + name + ": " + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError("stage " + name + ": " + e.what());
    } catch (const IoError& e) {
        throw IoError("stage " + name + ": " + e.what());
    }
}

void emit(const std::string& path, const std::string& text) {
    if (path == "-") std::fwrite(text.data(), 1, text.size(), stdout);
    else write_text(path, text);
}

std::string fmt(double x, const char* f = "%.6g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

void row(const std::string& name, const std::string& value, const std::string& status = "") {
    std::printf("  %-34s %-26s %s\n", name.c_str(), value.c_str(), status.c_str());
}

const char* mark(bool ok) { return ok ? "ok" : "FAIL"; }

int cmd_build(const BuildArgs& a) {
    detail::require(a.m >= 3 && a.m % 2 == 1, "--m must be odd and >= 3");
    detail::require(a.nu > 0.0 && a.nu < 1.0, "--nu must lie in (0,1)");
    detail::require(a.sigma > 0.0 && a.sigma < 1.0, "--sigma must lie in (0,1)");
    detail::require(a.eps0 >= 0.0, "--eps0 must be >= 0");
    detail::require(!(a.slope_target && a.eps_target), "give at most one of --slope-target and --eps-target");
    detail::require(a.atol > 0.0 && a.rtol > 0.0 && a.sigma_floor > 0.0, "tolerances must be positive");

    BuildRecord rec;
    rec.sigma = a.sigma;
    rec.seed = a.seed;
    rec.target = a.slope_target ? SlopeTarget{SlopeTarget::Kind::slope, *a.slope_target}
                                : SlopeTarget{SlopeTarget::Kind::eps, a.eps_target.value_or(1e-3)};
    rec.rule = stage("rule", [&] { return reduce_rule(hermite_rule(a.m)); });
    rec.initial = stage("layout", [&] { return layout(rec.rule, a.eps0, a.nu); });
    FlowOptions fo;
    fo.atol = a.atol;
    fo.rtol = a.rtol;
    fo.sigma_floor_rel = a.sigma_floor;
    rec.evolved = stage("evolve", [&] { return evolve(rec.initial, rec.target, fo); });
    stage("write", [&] {
        emit(a.out, dump(build_to_json(rec)));
        return 0;
    });

    const auto& fin = rec.evolved.instance;
    const auto& tr = rec.evolved.trace;
    std::printf("build  m=%d  bumps=%zu  -> %s\n", a.m, fin.size(), a.out.c_str());
    row("eps(0) -> eps(T)", fmt(rec.initial.eps) + " -> " + fmt(fin.eps));
    row("max slope", fmt(rec.initial.max_slope()) + " -> " + fmt(fin.max_slope()));
    row("status", tr.status(), tr.target_reached ? "" : tr.stop_reason);
    row("steps (rejected)", std::to_string(tr.step_sizes.size()) + " (" + std::to_string(tr.rejected_steps) + ")");
    row("moment residual after projection", fmt(tr.residual_after_projection));
    return 0;
}

int cmd_verify(const VerifyArgs& a) {
    const BuildRecord rec = stage("load", [&] { return load_build(a.in); });
    VerificationConfig cfg;
    cfg.sigma = rec.sigma;
    cfg.nu = rec.initial.nu;
    cfg.seed = a.seed;
    cfg.w1_samples = a.n;
    if (rec.target.kind == SlopeTarget::Kind::slope) cfg.slope_target = rec.target.value;
    const ReluNetwork net = stage("export", [&] { return compile(rec.evolved.instance); });
    const VerificationReport rep = stage("verify", [&] { return verify_instance(rec.initial, rec.evolved, net, cfg); });
    stage("write", [&] {
        emit(a.out, dump(report_to_json(rep)));
        return 0;
    });

    double merr = 0.0;
    for (double e : rep.moment_errors) merr = std::max(merr, e);
    std::printf("verify  %s  m=%d  sigma=%s  nu=%s  -> %s\n", a.in.c_str(), rep.m, fmt(cfg.sigma).c_str(),
                fmt(cfg.nu).c_str(), a.out.c_str());
    row("max |E x^k - E g^k|, k<=m", fmt(merr, "%.3e"), mark(rep.moments_pass));
    row("network deviation", fmt(rep.network_max_deviation, "%.3e"), mark(rep.network_pass));
    row("weight bound", fmt(rep.weight_bound), mark(rep.slope_pass));
    row("chi^2(D', N)", fmt(rep.chi_squared));
    for (const auto& b : rep.pairwise_corr)
        row("correlation @ cos " + fmt(b.cosine), fmt(b.value, "%.3e") + " <= " + fmt(b.bound, "%.3e"), mark(b.pass));
    for (const auto& b : rep.tv_separation)
        row("TV @ cos " + fmt(b.cosine), fmt(b.value, "%.4f") + " >= " + fmt(b.bound, "%.4f"), mark(b.pass));
    row("W1(D_0, D_T)", fmt(rep.w1_d0_dT, "%.3e") + " <= " + fmt(rep.w1_bound, "%.3e"), mark(rep.w1_pass));
    row("support exceedance", fmt(rep.support.exceed_probability, "%.4f"), mark(rep.support_pass));
    row("sigma_min(Z) range", fmt(rep.sigma_min_min) + " .. " + fmt(rep.sigma_min_max));
    for (const auto& e : rep.errors) row("error", e, "FAIL");
    std::printf("  overall: %s\n", rep.all_pass() ? "PASS" : "FAIL");
    if (!rep.all_pass()) {
        std::fprintf(stderr, "moment-forge: verification failed\n");
        return 2;
    }
    return 0;
}

std::vector<double> parse_direction(const std::string& spec, std::size_t d, std::uint64_t seed) {
    std::vector<double> v(d, 0.0);
    if (spec == "random") {
        Rng rng(seed, streams::directions);
        return random_unit_vector(d, rng);
    }
    if (spec.size() > 1 && spec[0] == 'e') {
        std::size_t idx = 0;
        try {
            idx = std::stoul(spec.substr(1));
        } catch (const std::exception&) {
            throw ValidationError("bad direction spec '" + spec + "'");
        }
        detail::require(idx >= 1 && idx <= d, "direction e<i> needs 1 <= i <= d");
        v[idx - 1] = 1.0;
        return v;
    }
    std::stringstream ss(spec);
    std::string tok;
    v.clear();
    while (std::getline(ss, tok, ',')) v.push_back(parse_real(json(tok), "direction entry"));
    detail::require(v.size() == d, "direction has " + std::to_string(v.size()) + " entries, expected d");
    double nrm = 0.0;
    for (double x : v) nrm += x * x;
    detail::require(nrm > 0.0, "direction must be nonzero");
    for (auto& x : v) x /= std::sqrt(nrm);
    return v;
}

int cmd_export(const ExportArgs& a) {
    const BuildRecord rec = stage("load", [&] { return load_build(a.in); });
    const ReluNetwork net = stage("compile", [&] { return compile(rec.evolved.instance); });
    std::string text;
    if (a.d == 0) {
        json j = network_to_json(net);
        j["sigma"] = format_real(rec.sigma);
        text = dump(j);
        std::printf("export  relu1d  units=%zu  weight bound=%s  -> %s\n", net.size(), fmt(net.weight_bound()).c_str(),
                    a.out.c_str());
    } else {
        const auto v = stage("direction", [&] { return parse_direction(a.v, a.d, a.seed); });
        const LiftedNetwork L = stage("lift", [&] { return lift(net, rec.sigma, a.d, v, a.duplicate); });
        text = dump(lifted_to_json(L));
        std::printf("export  lifted  d=%zu  units per output=%zu  -> %s\n", a.d, L.units_with_linear(), a.out.c_str());
    }
    stage("write", [&] {
        emit(a.out, text);
        return 0;
    });
    return 0;
}

int cmd_sample(const SampleArgs& a) {
    detail::require(a.hypothesis == "planted" || a.hypothesis == "null", "--hypothesis must be planted or null");
    detail::require(a.n >= 1, "--n must be >= 1");
    std::ostringstream out;
    std::size_t cols = 0;
    if (a.hypothesis == "null") {
        // the input file, if any, is ignored
        detail::require(a.d >= 1, "null sampling needs --d");
        const auto S = sample_null(a.d, a.n, a.seed);
        cols = S.cols;
        for (std::size_t i = 0; i < S.rows; ++i) {
            auto r = S.row(i);
            for (std::size_t j = 0; j < cols; ++j) out << (j ? "," : "") << format_real(r[j]);
            out << "\n";
        }
    } else {
        const json j = stage("load", [&] { return parse_json(read_text(a.in), a.in); });
        const std::string kind = j.is_object() && j.contains("kind") ? j.at("kind").get<std::string>() : "";
        if (kind == "lifted") {
            const LiftedNetwork L = stage("load", [&] { return lifted_from_json(j); });
            Rng rng(a.seed, streams::ambient);
            std::vector<double> z(L.input_dim());
            cols = L.output_dim();
            for (std::size_t i = 0; i < a.n; ++i) {
                for (auto& x : z) x = rng.normal();
                const auto y = L.evaluate(z);
                for (std::size_t c = 0; c < y.size(); ++c) out << (c ? "," : "") << format_real(y[c]);
                out << "\n";
            }
        } else {
            std::optional<PushforwardDist> D;
            if (kind == "relu1d") {
                const ReluNetwork net = stage("load", [&] { return network_from_json(j); });
                const double sigma = j.contains("sigma") ? parse_real(j.at("sigma"), "sigma") : 0.0;
                D = PushforwardDist::from_network(net, sigma);
            } else {
                const BuildRecord rec = stage("load", [&] { return build_from_json(j); });
                D = PushforwardDist::from_instance(rec.evolved.instance, rec.sigma);
            }
            if (a.d >= 2) {
                Rng rng(a.seed, streams::directions);
                const HiddenDirectionDist hd(random_unit_vector(a.d, rng), *D);
                const auto S = sample_hidden(hd, a.n, a.seed);
                cols = S.cols;
                for (std::size_t i = 0; i < S.rows; ++i) {
                    auto r = S.row(i);
                    for (std::size_t c = 0; c < cols; ++c) out << (c ? "," : "") << format_real(r[c]);
                    out << "\n";
                }
            } else {
                cols = 1;
                for (double x : D->sample(a.n, a.seed)) out << format_real(x) << "\n";
            }
        }
    }
    stage("write", [&] {
        emit(a.out, out.str());
        return 0;
    });
    if (a.out != "-") std::printf("sample  %s  n=%zu  dim=%zu  -> %s\n", a.hypothesis.c_str(), a.n, cols, a.out.c_str());
    return 0;
}

int cmd_distinguish(const DistinguishArgs& a) {
    detail::require(a.mode == "honest" || a.mode == "adversarial", "--mode must be honest or adversarial");
    detail::require(a.d >= 2, "--d must be >= 2");
    const BuildRecord rec = stage("load", [&] { return load_build(a.in); });
    const auto D = PushforwardDist::from_instance(rec.evolved.instance, rec.sigma);
    OracleOptions o;
    o.mode = a.mode == "honest" ? OracleMode::honest : OracleMode::adversarial;
    o.tau = a.tau;
    o.high_precision_samples = a.n;
    o.reference_seed = splitmix64(a.seed + 7);
    const auto factory = make_hidden_direction_factory(D, a.d, o);
    DistinguisherParams p;
    p.marginal = &D;
    p.directions = a.directions;
    std::vector<std::string> algos;
    if (a.algo == "all") algos = distinguisher_ids();
    else algos.push_back(a.algo);

    json results = json::array();
    std::printf("distinguish  mode=%s  d=%zu  tau=%s  trials=%zu\n", a.mode.c_str(), a.d, fmt(a.tau).c_str(), a.trials);
    std::printf("  %-26s %-9s %-9s %-9s %s\n", "algorithm", "decision", "advantage", "queries", "identical");
    for (const auto& id : algos) {
        const auto r = stage("distinguish", [&] { return run_distinguisher(id, factory, a.trials, a.seed, p); });
        results.push_back(distinguisher_to_json(r));
        std::printf("  %-26s %-9s %-9s %-9zu %zu/%zu\n", r.algorithm.c_str(), r.decision.c_str(),
                    fmt(r.advantage, "%.3f").c_str(), r.queries_used, r.identical_answer_trials, r.trials);
    }
    json j;
    j["schema"] = schema_id;
    j["kind"] = "experiment";
    j["config"] = {{"instance", a.in},
                   {"m", rec.evolved.instance.m},
                   {"sigma", format_real(rec.sigma)},
                   {"mode", a.mode},
                   {"d", a.d},
                   {"tau", format_real(a.tau)},
                   {"trials", a.trials},
                   {"directions", a.directions},
                   {"high_precision_samples", a.n},
                   {"seed", a.seed}};
    j["results"] = results;
    stage("write", [&] {
        emit(a.out, dump(j));
        return 0;
    });
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"moment-forge: moment-matched one-hidden-layer ReLU pushforward constructions"};
    app.require_subcommand(1);

    BuildArgs ba;
    auto* build = app.add_subcommand("build", "lay out and evolve a bump instance");
    build->add_option("--m", ba.m, "number of quadrature nodes (odd, >= 3)");
    build->add_option("--nu", ba.nu, "moment accuracy");
    build->add_option("--sigma", ba.sigma, "output smoothing noise");
    build->add_option("--eps0", ba.eps0, "initial ramp width");
    auto* st = build->add_option("--slope-target", ba.slope_target, "evolve until the max slope is at most this");
    build->add_option("--eps-target", ba.eps_target, "evolve until the ramp width reaches this")->excludes(st);
    build->add_option("--seed", ba.seed);
    build->add_option("--atol", ba.atol, "integrator absolute tolerance");
    build->add_option("--rtol", ba.rtol, "integrator relative tolerance");
    build->add_option("--sigma-floor", ba.sigma_floor, "relative floor on sigma_min(Z)");
    build->add_option("--out", ba.out, "instance file ('-' for stdout)");

    VerifyArgs va;
    auto* verify = app.add_subcommand("verify", "check an instance file and write a report");
    verify->add_option("instance", va.in)->required();
    verify->add_option("--seed", va.seed);
    verify->add_option("--n", va.n, "Monte Carlo samples for the W1 check");
    verify->add_option("--out", va.out, "report file");

    ExportArgs ea;
    auto* exp = app.add_subcommand("export", "compile an instance to a ReLU network");
    exp->add_option("instance", ea.in)->required();
    exp->add_option("--d", ea.d, "lift to a d-dimensional hidden-direction network (0: 1-D network)");
    exp->add_option("--v", ea.v, "direction: e<i>, random, or comma-separated entries");
    exp->add_option("--duplicate", ea.duplicate, "output duplication factor");
    exp->add_option("--seed", ea.seed);
    exp->add_option("--out", ea.out, "network file");

    SampleArgs sa;
    auto* sample = app.add_subcommand("sample", "draw samples from an instance or network");
    sample->add_option("file", sa.in, "instance or network file");
    sample->add_option("--n", sa.n, "number of samples");
    sample->add_option("--hypothesis", sa.hypothesis, "planted or null");
    sample->add_option("--d", sa.d, "ambient dimension (hidden-direction law for instances)");
    sample->add_option("--seed", sa.seed);
    sample->add_option("--out", sa.out, "output CSV ('-' for stdout)");

    DistinguishArgs da;
    auto* dis = app.add_subcommand("distinguish", "run SQ distinguishers on planted vs null");
    dis->add_option("instance", da.in)->required();
    dis->add_option("--algo", da.algo, "all, moment-scan, random-projection-moment or oracle-v");
    dis->add_option("--mode", da.mode, "honest or adversarial oracle");
    dis->add_option("--d", da.d);
    dis->add_option("--tau", da.tau);
    dis->add_option("--trials", da.trials);
    dis->add_option("--directions", da.directions, "random directions for random-projection-moment");
    dis->add_option("--n", da.n, "high-precision sample budget for adversarial answers");
    dis->add_option("--seed", da.seed);
    dis->add_option("--out", da.out, "experiment file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*build) return cmd_build(ba);
        if (*verify) return cmd_verify(va);
        if (*exp) return cmd_export(ea);
        if (*sample) {
            if (sa.hypothesis != "null" && sa.in.empty()) throw ValidationError("planted sampling needs an input file");
            return cmd_sample(sa);
        }
        if (*dis) return cmd_distinguish(da);
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "moment-forge: validation error: %s\n", e.what());
        return 2;
    } catch (const NumericGuardError& e) {
        std::fprintf(stderr, "moment-forge: numeric guard: %s\n", e.what());
        return 3;
    } catch (const IoError& e) {
        std::fprintf(stderr, "moment-forge: I/O error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "moment-forge: error: %s\n", e.what());
        return 1;
    }
    return 0;
}
