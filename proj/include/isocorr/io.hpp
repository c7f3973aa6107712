#pragma once

#include "isocorr/fields.hpp"
#include "isocorr/iterate.hpp"
#include "isocorr/stage.hpp"
#include "isocorr/verify.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace isocorr {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Field container: 8-byte magic, u64 header length, JSON header, raw doubles.
// ---------------------------------------------------------------------------

inline constexpr char kFieldMagic[8] = {'I', 'S', 'O', 'C', 'F', 'L', 'D', '1'};

namespace detail {

inline json grid_to_json(const Grid& g) {
    return json{{"len_x", g.len_x},      {"len_y", g.len_y},
                {"nx", g.nx},            {"ny", g.ny},
                {"periodic_x", g.periodic_x}, {"periodic_y", g.periodic_y}};
}

inline Grid grid_from_json(const json& j) {
    Grid g;
    g.len_x = j.at("len_x").get<double>();
    g.len_y = j.at("len_y").get<double>();
    g.nx = j.at("nx").get<int>();
    g.ny = j.at("ny").get<int>();
    g.periodic_x = j.at("periodic_x").get<bool>();
    g.periodic_y = j.at("periodic_y").get<bool>();
    return g;
}

inline void write_container(const std::string& path, const std::string& kind, const Grid& g,
                            int comps, const std::vector<double>& data) {
    json header{{"schema_version", 1}, {"kind", kind}, {"comps", comps}, {"grid", grid_to_json(g)}};
    const std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(kFieldMagic, 8);
    const std::uint64_t len = hs.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!out) throw IoError("write failed: " + path);
}

inline std::pair<json, std::vector<double>> read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kFieldMagic, 8) != 0)
        throw IoError("not a field container: " + path);
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    std::string hs(len, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(len));
    const json header = json::parse(hs);
    const Grid g = grid_from_json(header.at("grid"));
    const int comps = header.at("comps").get<int>();
    std::vector<double> data(g.nodes() * comps);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw IoError("truncated field container: " + path);
    return {header, std::move(data)};
}

} // namespace detail

inline void write_field(const std::string& path, const ScalarField& f) {
    detail::write_container(path, "scalar", f.grid(), 1, f.raw());
}
inline void write_field(const std::string& path, const MapField& f) {
    detail::write_container(path, "map", f.grid(), f.dim(), f.raw());
}
inline void write_field(const std::string& path, const SymMatrixField& f) {
    detail::write_container(path, "sym2", f.grid(), 3, f.raw());
}

inline ScalarField read_scalar_field(const std::string& path) {
    auto [header, data] = detail::read_container(path);
    if (header.at("kind") != "scalar") throw IoError("field kind mismatch: " + path);
    ScalarField f(detail::grid_from_json(header.at("grid")));
    f.raw() = std::move(data);
    return f;
}

inline MapField read_map_field(const std::string& path) {
    auto [header, data] = detail::read_container(path);
    if (header.at("kind") != "map") throw IoError("field kind mismatch: " + path);
    MapField f(detail::grid_from_json(header.at("grid")), header.at("comps").get<int>());
    f.raw() = std::move(data);
    return f;
}

inline SymMatrixField read_sym_field(const std::string& path) {
    auto [header, data] = detail::read_container(path);
    if (header.at("kind") != "sym2") throw IoError("field kind mismatch: " + path);
    SymMatrixField f(detail::grid_from_json(header.at("grid")));
    f.raw() = std::move(data);
    return f;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    void write(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot open for writing: " + path);
        for (std::size_t k = 0; k < header.size(); ++k)
            out << header[k] << (k + 1 < header.size() ? "," : "\n");
        for (const auto& row : rows)
            for (std::size_t k = 0; k < row.size(); ++k)
                out << format_double(row[k]) << (k + 1 < row.size() ? "," : "\n");
        if (!out) throw IoError("write failed: " + path);
    }
};

/// 1-D slice export: values along a grid row or column.
inline void write_slice_csv(const std::string& path, const ScalarField& f, int fixed_axis,
                            int index) {
    CsvTable t;
    t.header = {"coord", "value"};
    const Grid& g = f.grid();
    if (fixed_axis == 1) {
        for (int i = 0; i < g.nx; ++i) t.rows.push_back({g.x(i), f.at(i, index)});
    } else {
        for (int j = 0; j < g.ny; ++j) t.rows.push_back({g.y(j), f.at(index, j)});
    }
    t.write(path);
}

// ---------------------------------------------------------------------------
// OBJ mesh export
// ---------------------------------------------------------------------------

/// Triangulated quad mesh of three selected target coordinates of u, with
/// deterministic vertex order; periodic axes emit wrap faces so the mesh
/// closes.
inline void export_mesh(const std::string& path, const MapField& u,
                        const std::array<int, 3>& indices) {
    for (int k : indices)
        if (k < 0 || k >= u.dim()) throw PreconditionError("export_mesh: projection index out of range");
    const Grid& g = u.grid();
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i)
            out << "v " << format_double(u.at(i, j, indices[0])) << ' '
                << format_double(u.at(i, j, indices[1])) << ' '
                << format_double(u.at(i, j, indices[2])) << '\n';
    const int cols = g.periodic_x ? g.nx : g.nx - 1;
    const int rows = g.periodic_y ? g.ny : g.ny - 1;
    auto vid = [&](int i, int j) { return g.idx(wrap_index(i, g.nx), wrap_index(j, g.ny)) + 1; };
    for (int j = 0; j < rows; ++j)
        for (int i = 0; i < cols; ++i) {
            const auto a = vid(i, j), b = vid(i + 1, j), c = vid(i + 1, j + 1), d = vid(i, j + 1);
            out << "f " << a << ' ' << b << ' ' << c << '\n';
            out << "f " << a << ' ' << c << ' ' << d << '\n';
        }
    if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

inline json to_json(const StageCheck& c) {
    return json{{"name", c.name},
                {"measured", c.measured},
                {"bound", c.bound},
                {"status", to_string(c.status)}};
}

inline json to_json(const StageCertificate& c) {
    json checks = json::array();
    for (const auto& ch : c.checks) checks.push_back(to_json(ch));
    return json{{"delta", c.delta},
                {"lambda", c.lambda},
                {"tau", c.tau},
                {"du_c0", c.du_c0},
                {"du_c1", c.du_c1},
                {"v_c2", c.v_c2},
                {"err_c0", c.err_c0},
                {"err_c1", c.err_c1},
                {"bound_du_c0", c.bound_du_c0},
                {"bound_du_c1", c.bound_du_c1},
                {"bound_v_c2", c.bound_v_c2},
                {"bound_err_c0", c.bound_err_c0},
                {"bound_err_c1", c.bound_err_c1},
                {"eps_sqrt", c.eps_sqrt},
                {"ell_u", c.ell_u},
                {"ell_b", c.ell_b},
                {"b_mollified", c.b_mollified},
                {"budget_max", c.budget_max},
                {"nodes_solved", c.nodes_solved},
                {"inputs_hash", c.inputs_hash},
                {"support_excess", c.support_excess},
                {"checks", checks}};
}

inline json to_json(const ConvergenceReport& r) {
    json rows = json::array();
    for (const auto& row : r.rows)
        rows.push_back(json{{"q", row.q},
                            {"acted", row.acted},
                            {"du_c0", row.du_c0},
                            {"du_c1", row.du_c1},
                            {"rho_max", row.rho_max},
                            {"defect_sup", row.defect_sup},
                            {"defect_identity", row.defect_identity},
                            {"delta_stage", row.delta_stage},
                            {"lambda_stage", row.lambda_stage},
                            {"certificate", to_json(row.certificate)}});
    return json{{"schema_version", 1},
                {"rows", rows},
                {"final_defect", r.final_defect},
                {"final_identity_error", r.final_identity_error},
                {"holder_exponent", r.holder_exponent},
                {"holder_residual", r.holder_residual},
                {"locality_exact", r.locality_exact},
                {"note", r.note}};
}

inline CsvTable to_csv(const ConvergenceReport& r) {
    CsvTable t;
    t.header = {"q", "du_c0", "du_c1", "rho_max", "defect_sup", "defect_identity", "delta_stage",
                "lambda_stage"};
    for (const auto& row : r.rows)
        t.rows.push_back({static_cast<double>(row.q), row.du_c0, row.du_c1, row.rho_max,
                          row.defect_sup, row.defect_identity, row.delta_stage, row.lambda_stage});
    return t;
}

inline json to_json(const GapReport& r) {
    return json{{"schema_version", 1},
                {"connection", r.connection},
                {"second_form", r.second_form},
                {"min_gap", r.min_gap},
                {"max_gap", r.max_gap}};
}

inline void write_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path);
}

} // namespace isocorr
