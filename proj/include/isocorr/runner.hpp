#pragma once

#include "isocorr/extend.hpp"
#include "isocorr/io.hpp"

#include <filesystem>
#include <set>
#include <string>

namespace isocorr {

inline constexpr const char* kLibraryVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Strict config access: unknown keys are errors, so a typo cannot silently
// change an estimate-sensitive run.
// ---------------------------------------------------------------------------

namespace cfg {

inline void check_keys(const json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <class T>
T req(const json& j, const std::string& key, const std::string& where) {
    if (!j.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + ": bad value for '" + key + "'");
    }
}

template <class T>
T opt(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("bad value for '" + key + "'");
    }
}

inline Grid parse_grid(const json& j, const std::string& where) {
    check_keys(j, {"len", "len_x", "len_y", "nodes", "nx", "ny", "periodic"}, where);
    const double len = opt<double>(j, "len", 1.0);
    const double lx = opt<double>(j, "len_x", len);
    const double ly = opt<double>(j, "len_y", len);
    const int nodes = opt<int>(j, "nodes", 128);
    const int nx = opt<int>(j, "nx", nodes);
    const int ny = opt<int>(j, "ny", nodes);
    const bool periodic = opt<bool>(j, "periodic", false);
    return make_grid(lx, ly, nx, ny, periodic, periodic);
}

inline TargetSet parse_target(const json& j, const std::string& where) {
    if (j.is_null()) return TargetSet{};
    check_keys(j, {"kind", "cells"}, where);
    TargetSet t;
    const std::string kind = req<std::string>(j, "kind", where);
    if (kind == "whole")
        t.kind = TargetSet::Kind::WholeChart;
    else if (kind == "vertices")
        t.kind = TargetSet::Kind::SkeletonVertices;
    else if (kind == "lines")
        t.kind = TargetSet::Kind::SkeletonLines;
    else
        throw ConfigError(where + ": unknown target kind '" + kind + "'");
    t.cells = opt<int>(j, "cells", 4);
    return t;
}

} // namespace cfg

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

inline std::string config_hash(const json& config) {
    const std::string s = config.dump();
    return fnv1a_hex(s.data(), s.size());
}

struct RunContext {
    std::filesystem::path out_dir;
    std::uint64_t seed = 0;
    json manifest;

    void record_checks(const std::vector<StageCheck>& checks, const std::string& label) {
        json arr = json::array();
        for (const auto& c : checks) arr.push_back(to_json(c));
        manifest["preconditions"][label] = arr;
    }

    std::string path(const std::string& name) const { return (out_dir / name).string(); }
};

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace detail {

inline ScalarField make_rho(const json& spec, const Grid& g, double delta, double lambda) {
    cfg::check_keys(spec, {"kind", "fraction", "direction", "center", "radius", "width"}, "rho");
    const std::string kind = cfg::req<std::string>(spec, "kind", "rho");
    const double sqrt_delta = std::sqrt(delta);
    const double frac = cfg::opt<double>(spec, "fraction", 1.0);
    if (kind == "constant")
        return ScalarField::sample(g, [&](double, double) { return sqrt_delta * frac; });
    if (kind == "sin") {
        // saturates half the C^1 budget: |grad rho| = sqrt(delta) lambda / 2
        std::array<double, 2> dir = cfg::opt<std::array<double, 2>>(spec, "direction", {0.6, 0.8});
        return ScalarField::sample(g, [&](double x, double y) {
            return sqrt_delta * 0.5 * (1.0 + std::sin(lambda * (dir[0] * x + dir[1] * y)));
        });
    }
    if (kind == "bump") {
        const double radius = cfg::opt<double>(spec, "radius", 0.25 * std::min(g.len_x, g.len_y));
        const double width = cfg::opt<double>(spec, "width", 0.5 * radius);
        std::array<double, 2> center =
            cfg::opt<std::array<double, 2>>(spec, "center", {0.5 * g.len_x, 0.5 * g.len_y});
        return ScalarField::sample(g, [&](double x, double y) {
            const double d = std::hypot(x - center[0], y - center[1]);
            return sqrt_delta * frac * isocorr::detail::smoothstep5((radius - d) / width);
        });
    }
    throw ConfigError("rho: unknown kind '" + kind + "'");
}

inline SymMatrixField make_metric(const json& spec, const Grid& g) {
    if (spec.is_null()) return SymMatrixField::constant(g, Mat2::identity());
    cfg::check_keys(spec, {"kind", "amplitude", "frequency"}, "metric");
    const std::string kind = cfg::req<std::string>(spec, "kind", "metric");
    if (kind == "identity") return SymMatrixField::constant(g, Mat2::identity());
    if (kind == "conformal_sin") {
        const double amp = cfg::opt<double>(spec, "amplitude", 0.1);
        const double freq = cfg::opt<double>(spec, "frequency", 1.0);
        return SymMatrixField::sample(g, [&](double x, double) {
            const double c = 1.0 + amp * std::sin(freq * x);
            return Mat2{c, 0.0, c};
        });
    }
    throw ConfigError("metric: unknown kind '" + kind + "'");
}

inline MapField flat_inclusion(const Grid& g, int m = 8) {
    return MapField::sample(g, m, [&](double x, double y, double* out) {
        for (int k = 0; k < m; ++k) out[k] = 0.0;
        out[0] = x;
        out[1] = y;
    });
}

inline StageParams stage_params_from(const json& c, const std::string& where) {
    StageParams p;
    p.delta = cfg::req<double>(c, "delta", where);
    p.lambda = cfg::req<double>(c, "lambda", where);
    p.tau = cfg::opt<double>(c, "tau", 1.5);
    p.gamma = cfg::opt<double>(c, "gamma", 4.0);
    p.sigma0 = cfg::opt<double>(c, "sigma0", 0.1);
    p.C0 = cfg::opt<double>(c, "C0", 4.0);
    p.lambda0 = cfg::opt<double>(c, "lambda0", 32.0);
    p.enforce = cfg::opt<bool>(c, "enforce", true);
    return p;
}

inline std::pair<CollarChart, SigmaData> parse_problem(const json& j) {
    cfg::check_keys(j,
                    {"kind", "radius", "ambient_L", "eps", "nx", "nt", "m", "len_x", "f", "mu", "L",
                     "G"},
                    "problem");
    const std::string kind = cfg::req<std::string>(j, "kind", "problem");
    if (kind == "circle") {
        return make_circle_problem(cfg::opt<double>(j, "radius", 1.0),
                                   cfg::opt<double>(j, "ambient_L", 0.0),
                                   cfg::req<double>(j, "eps", "problem"),
                                   cfg::opt<int>(j, "nx", 256), cfg::opt<int>(j, "nt", 256),
                                   cfg::opt<int>(j, "m", 8));
    }
    if (kind == "samples") {
        const int nx = cfg::req<int>(j, "nx", "problem");
        const int nt = cfg::req<int>(j, "nt", "problem");
        const int m = cfg::opt<int>(j, "m", 8);
        const double eps = cfg::req<double>(j, "eps", "problem");
        SigmaData sd;
        sd.m = m;
        sd.nx = nx;
        sd.f = cfg::req<std::vector<double>>(j, "f", "problem");
        sd.mu = cfg::req<std::vector<double>>(j, "mu", "problem");
        sd.L = cfg::req<std::vector<double>>(j, "L", "problem");
        if (sd.f.size() != static_cast<std::size_t>(nx) * m ||
            sd.mu.size() != static_cast<std::size_t>(nx) * m ||
            sd.L.size() != static_cast<std::size_t>(nx))
            throw ConfigError("problem: sample array sizes do not match nx and m");
        CollarChart collar;
        collar.grid = make_grid(cfg::opt<double>(j, "len_x", 2.0 * M_PI), eps, nx, nt, true, false);
        const std::vector<double> G = cfg::req<std::vector<double>>(j, "G", "problem");
        if (G.size() != collar.grid.nodes()) throw ConfigError("problem: G size mismatch");
        collar.G = ScalarField(collar.grid);
        collar.G.raw() = G;
        return {std::move(collar), std::move(sd)};
    }
    throw ConfigError("problem: unknown kind '" + kind + "'");
}

} // namespace detail

inline json run_stage_command(const json& c, RunContext& ctx) {
    cfg::check_keys(c,
                    {"command", "grid", "delta", "lambda", "tau", "gamma", "sigma0", "C0", "lambda0",
                     "enforce", "rho", "export_obj", "export_field"},
                    "stage");
    const Grid g = cfg::parse_grid(c.at("grid"), "stage.grid");
    StageParams p = detail::stage_params_from(c, "stage");
    const MapField u = detail::flat_inclusion(g);
    const SymMatrixField G = SymMatrixField::constant(g, Mat2::identity());
    const SymMatrixField H(g);
    const ScalarField rho = detail::make_rho(c.at("rho"), g, p.delta, p.lambda);

    StageResult r = perform_stage(u, rho, H, G, p);
    ctx.record_checks(r.certificate.checks, "stage");
    write_json(ctx.path("certificate.json"), to_json(r.certificate));
    if (cfg::opt<bool>(c, "export_obj", false))
        export_mesh(ctx.path("corrugated.obj"), r.v, {0, 1, 2});
    if (cfg::opt<bool>(c, "export_field", false)) write_field(ctx.path("v.fld"), r.v);

    json measured{{"du_c0", r.certificate.du_c0},
                  {"du_c1", r.certificate.du_c1},
                  {"v_c2", r.certificate.v_c2},
                  {"err_c0", r.certificate.err_c0},
                  {"err_c1", r.certificate.err_c1},
                  {"support_excess", r.certificate.support_excess}};
    return measured;
}

inline json run_ladder_command(const json& c, RunContext& ctx) {
    cfg::check_keys(c,
                    {"command", "nodes", "nodes_per_period", "delta", "tau", "lambdas", "gamma",
                     "sigma0", "C0", "lambda0", "enforce", "rho"},
                    "ladder");
    const int nodes = cfg::opt<int>(c, "nodes", 256);
    const double npp = cfg::opt<double>(c, "nodes_per_period", 128.0);
    const double delta = cfg::req<double>(c, "delta", "ladder");
    const double tau = cfg::opt<double>(c, "tau", 1.5);
    const std::vector<double> lambdas = cfg::req<std::vector<double>>(c, "lambdas", "ladder");
    if (lambdas.size() < 2) throw ConfigError("ladder: need at least two lambda rungs");

    std::vector<StageCertificate> certs;
    CsvTable table;
    table.header = {"lambda", "du_c0", "du_c1", "v_c2", "err_c0", "err_c1"};
    for (double lambda : lambdas) {
        // per-rung chart sized for a fixed node count per corrugation period
        const double h = 2.0 * M_PI / (npp * std::pow(lambda, tau));
        const Grid g = make_grid(h * (nodes - 1), nodes, false);
        StageParams p;
        p.delta = delta;
        p.lambda = lambda;
        p.tau = tau;
        p.gamma = cfg::opt<double>(c, "gamma", 4.0);
        p.sigma0 = cfg::opt<double>(c, "sigma0", 0.1);
        p.C0 = cfg::opt<double>(c, "C0", 4.0);
        p.lambda0 = cfg::opt<double>(c, "lambda0", 32.0);
        p.enforce = cfg::opt<bool>(c, "enforce", true);
        const MapField u = detail::flat_inclusion(g);
        const SymMatrixField G = SymMatrixField::constant(g, Mat2::identity());
        const json rho_spec = c.contains("rho") ? c.at("rho") : json{{"kind", "sin"}};
        const ScalarField rho = detail::make_rho(rho_spec, g, delta, lambda);
        StageResult r = perform_stage(u, rho, SymMatrixField(g), G, p);
        ctx.record_checks(r.certificate.checks, "ladder lambda=" + format_double(lambda));
        certs.push_back(r.certificate);
        table.rows.push_back({lambda, r.certificate.du_c0, r.certificate.du_c1, r.certificate.v_c2,
                              r.certificate.err_c0, r.certificate.err_c1});
    }
    table.write(ctx.path("ladder.csv"));

    const LadderSlopes slopes = ladder_slopes(certs);
    json out{{"slope_err_c0", slopes.err_c0.slope},
             {"slope_du_c0", slopes.du_c0.slope},
             {"slope_v_c2", slopes.v_c2.slope},
             {"du_c1_spread", slopes.du_c1_spread},
             {"expected_err_c0", 2.0 - 2.0 * tau},
             {"expected_du_c0", -tau},
             {"expected_v_c2", tau}};
    write_json(ctx.path("slopes.json"), out);
    return out;
}

inline json run_iterate_command(const json& c, RunContext& ctx, bool torus) {
    cfg::check_keys(c,
                    {"command", "grid", "metric", "theta", "b", "A", "q_max", "delta1_target",
                     "eps_target", "gamma", "sigma0", "C0", "lambda0", "stage_C",
                     "seam_margin_frac", "enforce", "target", "export_obj", "snapshot_fields"},
                    "iterate");
    Grid g = cfg::parse_grid(c.at("grid"), "iterate.grid");
    if (torus && !(g.periodic_x && g.periodic_y))
        throw ConfigError("embed-torus: grid must be periodic");
    const SymMatrixField G = detail::make_metric(c.contains("metric") ? c.at("metric") : json{}, g);

    EmbedDemoConfig cfg_demo;
    cfg_demo.theta = cfg::opt<double>(c, "theta", 0.45);
    cfg_demo.b = cfg::opt<double>(c, "b", 1.1);
    cfg_demo.A = cfg::opt<double>(c, "A", 32.0);
    cfg_demo.q_max = cfg::opt<int>(c, "q_max", 4);
    cfg_demo.delta1_target = cfg::opt<double>(c, "delta1_target", 0.2);
    cfg_demo.eps_target = cfg::opt<double>(c, "eps_target", 0.5);
    cfg_demo.extras.gamma = cfg::opt<double>(c, "gamma", 4.0);
    cfg_demo.extras.sigma0 = cfg::opt<double>(c, "sigma0", 0.1);
    cfg_demo.extras.C0 = cfg::opt<double>(c, "C0", 1.0);
    cfg_demo.extras.lambda0 = cfg::opt<double>(c, "lambda0", 1.0);
    cfg_demo.extras.stage_C = cfg::opt<double>(c, "stage_C", 1.0);
    cfg_demo.extras.seam_margin_frac = cfg::opt<double>(c, "seam_margin_frac", 0.05);
    cfg_demo.extras.enforce = cfg::opt<bool>(c, "enforce", false);
    cfg_demo.extras.keep_snapshots = cfg::opt<bool>(c, "snapshot_fields", false);

    EmbedDemoResult r = global_embed_demo(G, cfg_demo);
    for (const auto& row : r.report.rows)
        if (row.acted)
            ctx.record_checks(row.certificate.checks, "iterate q=" + std::to_string(row.q));

    write_json(ctx.path("report.json"), to_json(r.report));
    to_csv(r.report).write(ctx.path("report.csv"));
    if (cfg::opt<bool>(c, "snapshot_fields", false)) {
        write_field(ctx.path("u_final.fld"), r.triple.u);
        write_field(ctx.path("rho_final.fld"), r.triple.rho);
        for (std::size_t q = 0; q < r.report.snapshots.size(); ++q) {
            const AdaptedTriple& t = r.report.snapshots[q];
            const std::string tag = "q" + std::to_string(q + 1);
            write_field(ctx.path("u_" + tag + ".fld"), t.u);
            write_field(ctx.path("rho_" + tag + ".fld"), t.rho);
            write_field(ctx.path("h_" + tag + ".fld"), t.h);
        }
    }
    if (cfg::opt<bool>(c, "export_obj", false))
        export_mesh(ctx.path("embedded.obj"), r.triple.u, {0, 1, 2});

    json measured{{"final_defect", r.report.final_defect},
                  {"final_identity_error", r.report.final_identity_error},
                  {"holder_exponent", r.report.holder_exponent},
                  {"proximity", r.proximity},
                  {"eps_target", cfg_demo.eps_target},
                  {"scale_r", r.scale_r},
                  {"stages_acted", [&] {
                       int n = 0;
                       for (const auto& row : r.report.rows) n += row.acted ? 1 : 0;
                       return n;
                   }()}};
    return measured;
}

inline json run_extend_command(const json& c, RunContext& ctx) {
    cfg::check_keys(c,
                    {"command", "problem", "alpha", "K", "layer_tau", "layer_C0", "layers", "theta0",
                     "theta", "b", "A", "q_max", "gamma", "sigma0", "enforce", "target",
                     "export_obj", "snapshot_fields"},
                    "extend");
    auto [collar, sd] = detail::parse_problem(c.at("problem"));

    IsometricExtensionConfig ec;
    ec.extension.alpha = cfg::opt<double>(c, "alpha", 0.05);
    ec.extension.K = cfg::opt<double>(c, "K", 8.0);
    ec.extension.layer_tau = cfg::opt<double>(c, "layer_tau", 1.2);
    ec.extension.layer_C0 = cfg::opt<double>(c, "layer_C0", 2.0);
    ec.extension.layers = cfg::opt<int>(c, "layers", -1);
    ec.extension.theta0 = cfg::opt<double>(c, "theta0", 0.45);
    ec.extension.gamma = cfg::opt<double>(c, "gamma", 8.0);
    ec.extension.sigma0 = cfg::opt<double>(c, "sigma0", 0.2);
    ec.extension.enforce = cfg::opt<bool>(c, "enforce", false);
    ec.theta = cfg::opt<double>(c, "theta", 0.45);
    ec.b = cfg::opt<double>(c, "b", 1.1);
    ec.A = cfg::opt<double>(c, "A", 32.0);
    ec.q_max = cfg::opt<int>(c, "q_max", 2);
    if (c.contains("target")) ec.target = cfg::parse_target(c.at("target"), "extend.target");

    IsometricExtensionResult r = isometric_extension(sd, collar, ec);
    const GapReport gap = connection_gap(r.u_final, sd, collar);
    write_json(ctx.path("gap.json"), to_json(gap));
    write_json(ctx.path("report.json"), to_json(r.report));

    double min_margin = r.margin.empty() ? 0.0 : r.margin[0];
    for (double m : r.margin) min_margin = std::min(min_margin, m);

    if (cfg::opt<bool>(c, "export_obj", false))
        export_mesh(ctx.path("extension.obj"), r.u_final, {0, 1, 2});
    if (cfg::opt<bool>(c, "snapshot_fields", false)) write_field(ctx.path("u_final.fld"), r.u_final);

    json measured{{"final_defect", r.final_defect_sup},
                  {"sigma_value_error", r.sigma_value_error},
                  {"mu_match_error", r.mu_match_error},
                  {"min_gap", gap.min_gap},
                  {"max_gap", gap.max_gap},
                  {"min_margin", min_margin},
                  {"layers_ran", r.layers_ran},
                  {"layers_used", r.layers_used},
                  {"note", r.note}};
    return measured;
}

inline json run_verify_command(const json& c, RunContext& ctx) {
    cfg::check_keys(c, {"command", "mode", "field", "problem", "ladder"}, "verify");
    const std::string mode = cfg::req<std::string>(c, "mode", "verify");
    if (mode == "gap") {
        auto [collar, sd] = detail::parse_problem(c.at("problem"));
        const MapField u = read_map_field(cfg::req<std::string>(c, "field", "verify"));
        const GapReport gap = connection_gap(u, sd, collar);
        write_json(ctx.path("gap.json"), to_json(gap));
        return json{{"min_gap", gap.min_gap}, {"max_gap", gap.max_gap}};
    }
    if (mode == "holder") {
        const MapField u = read_map_field(cfg::req<std::string>(c, "field", "verify"));
        const JacobianField J = jacobian(u);
        std::vector<double> ladder = cfg::opt<std::vector<double>>(c, "ladder", {});
        if (ladder.empty()) ladder = default_radius_ladder(u.grid());
        const SlopeFit fit = holder_exponent_estimate(J.view(), ladder);
        json out{{"exponent", fit.slope}, {"residual", fit.residual}};
        write_json(ctx.path("holder.json"), out);
        return out;
    }
    throw ConfigError("verify: unknown mode '" + mode + "'");
}

// ---------------------------------------------------------------------------

/// Execute one validated config. Writes the requested artifacts plus a
/// manifest that is byte-identical across reruns of the same config and seed.
inline json run_config(const json& config, const std::string& out_dir, std::uint64_t seed) {
    if (!config.is_object()) throw ConfigError("config: expected a JSON object");
    const std::string command = cfg::req<std::string>(config, "command", "config");

    RunContext ctx;
    ctx.out_dir = out_dir;
    ctx.seed = seed;
    std::filesystem::create_directories(ctx.out_dir);

    ctx.manifest = json{{"schema_version", 1},
                        {"command", command},
                        {"library_version", kLibraryVersion},
                        {"seed", seed},
                        {"config", config},
                        {"config_hash", config_hash(config)},
                        {"preconditions", json::object()}};

    json measured;
    if (command == "stage")
        measured = run_stage_command(config, ctx);
    else if (command == "ladder")
        measured = run_ladder_command(config, ctx);
    else if (command == "iterate")
        measured = run_iterate_command(config, ctx, false);
    else if (command == "embed-torus")
        measured = run_iterate_command(config, ctx, true);
    else if (command == "extend")
        measured = run_extend_command(config, ctx);
    else if (command == "verify")
        measured = run_verify_command(config, ctx);
    else
        throw ConfigError("config: unknown command '" + command + "'");

    ctx.manifest["measured"] = measured;
    write_json(ctx.path("manifest.json"), ctx.manifest);
    return ctx.manifest;
}

inline json run_config_file(const std::string& config_path, const std::string& out_dir,
                            std::uint64_t seed) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config: " + config_path);
    json config;
    try {
        config = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return run_config(config, out_dir, seed);
}

} // namespace isocorr
