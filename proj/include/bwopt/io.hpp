#pragma once

// File formats: JSON plant files, layered run configuration, report.json and
// the CSV writers. All emitted files are byte-deterministic for fixed inputs.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bwopt/controller.hpp"
#include "bwopt/freq.hpp"
#include "bwopt/lti.hpp"
#include "bwopt/nsopt.hpp"

namespace bwopt {

using Json = nlohmann::ordered_json;

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline Json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open file");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        // translate the byte offset into a line number
        std::size_t line = 1;
        for (std::size_t i = 0; i < e.byte && i < text.size(); ++i)
            if (text[i] == '\n') ++line;
        throw ParseError(path + ":" + std::to_string(line) + ": " + e.what());
    }
}

inline const Json& require(const Json& j, const std::string& path, const std::string& key) {
    if (!j.is_object() || !j.contains(key))
        throw ParseError("missing field: " + path + "." + key);
    return j.at(key);
}

inline double as_number(const Json& j, const std::string& path) {
    if (!j.is_number()) throw ParseError("field " + path + " must be a number");
    return j.get<double>();
}

inline Vector as_vector(const Json& j, const std::string& path) {
    if (!j.is_array()) throw ParseError("field " + path + " must be an array of numbers");
    Vector v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i)
        v(static_cast<Eigen::Index>(i)) = as_number(j[i], path + "[" + std::to_string(i) + "]");
    return v;
}

inline Matrix as_matrix(const Json& j, const std::string& path) {
    if (!j.is_array() || j.empty())
        throw ParseError("field " + path + " must be a non-empty array of rows");
    std::vector<Vector> rows;
    for (std::size_t i = 0; i < j.size(); ++i)
        rows.push_back(as_vector(j[i], path + "[" + std::to_string(i) + "]"));
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != m.cols())
            throw ParseError("field " + path + " has ragged rows (row " + std::to_string(i) + ")");
        m.row(static_cast<Eigen::Index>(i)) = rows[i];
    }
    return m;
}

inline Json matrix_to_json(const Matrix& m) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Json vector_to_json(const Vector& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

}  // namespace detail

// Plant file schema (all quantities SI: kg, N s/m, N/m):
//   { "n_channels": int,
//     "modal": { "mass": [..], "damping": [..], "stiffness": [..] },
//     "P": [[..]], "Q": [[..]], "T_u": [[..]], "T_y": [[..]] }
inline DecoupledPlant plant_from_json(const Json& j, const std::string& root = "plant") {
    const Json& modal = detail::require(j, root, "modal");
    const Vector mass = detail::as_vector(detail::require(modal, root + ".modal", "mass"),
                                          root + ".modal.mass");
    const Vector damping = detail::as_vector(detail::require(modal, root + ".modal", "damping"),
                                             root + ".modal.damping");
    const Vector stiffness = detail::as_vector(
        detail::require(modal, root + ".modal", "stiffness"), root + ".modal.stiffness");
    const Matrix p = detail::as_matrix(detail::require(j, root, "P"), root + ".P");
    const Matrix q = detail::as_matrix(detail::require(j, root, "Q"), root + ".Q");
    const Matrix tu = detail::as_matrix(detail::require(j, root, "T_u"), root + ".T_u");
    const Matrix ty = detail::as_matrix(detail::require(j, root, "T_y"), root + ".T_y");
    const int n_channels = static_cast<int>(
        detail::as_number(detail::require(j, root, "n_channels"), root + ".n_channels"));

    try {
        DecoupledPlant plant(ModalPlant(mass, damping, stiffness, p, q), tu, ty);
        if (plant.n_channels() != n_channels)
            throw ParseError("field " + root + ".n_channels disagrees with P/Q/T_u/T_y shapes");
        return plant;
    } catch (const std::invalid_argument& e) {
        throw ParseError(root + ": " + e.what());
    }
}

inline DecoupledPlant load_plant(const std::string& path) {
    return plant_from_json(detail::load_json_file(path), path);
}

inline Json plant_to_json(const DecoupledPlant& plant) {
    const ModalPlant& b = plant.base();
    Json j;
    j["n_channels"] = static_cast<int>(plant.n_channels());
    j["modal"] = {{"mass", detail::vector_to_json(b.mass())},
                  {"damping", detail::vector_to_json(b.damping())},
                  {"stiffness", detail::vector_to_json(b.stiffness())}};
    j["P"] = detail::matrix_to_json(b.input_map());
    j["Q"] = detail::matrix_to_json(b.measurement_map());
    j["T_u"] = detail::matrix_to_json(plant.T_u());
    j["T_y"] = detail::matrix_to_json(plant.T_y());
    return j;
}

// Controller block:
//   { "channels": [ { "modal_mass": .., "alpha": .., "z_lp": .. } ],
//     "notches": [ { "channel": .., "omega_n": .. } ],
//     "omega_c0": [..], "beta0": [..], "zeta0": [..], "scaling": [..] }
// beta0/zeta0 may be omitted when there are no notches; scaling defaults to
// omega_c0 on the channel slots and 1 on the notch slots.
struct ControllerConfig {
    ControllerStructure structure{{}, {}};
    ControllerParams initial;
};

inline ControllerConfig controller_from_json(const Json& j, const std::string& root = "controller") {
    const Json& jch = detail::require(j, root, "channels");
    if (!jch.is_array() || jch.empty())
        throw ParseError("field " + root + ".channels must be a non-empty array");
    std::vector<PidLowpassSpec> channels;
    for (std::size_t i = 0; i < jch.size(); ++i) {
        const std::string cp = root + ".channels[" + std::to_string(i) + "]";
        PidLowpassSpec spec;
        spec.modal_mass = detail::as_number(detail::require(jch[i], cp, "modal_mass"),
                                            cp + ".modal_mass");
        if (jch[i].contains("alpha")) spec.alpha = detail::as_number(jch[i]["alpha"], cp + ".alpha");
        if (jch[i].contains("z_lp")) spec.z_lp = detail::as_number(jch[i]["z_lp"], cp + ".z_lp");
        channels.push_back(spec);
    }

    std::vector<NotchSpec> notches;
    if (j.contains("notches")) {
        const Json& jn = j.at("notches");
        if (!jn.is_array()) throw ParseError("field " + root + ".notches must be an array");
        for (std::size_t i = 0; i < jn.size(); ++i) {
            const std::string np = root + ".notches[" + std::to_string(i) + "]";
            NotchSpec nt;
            nt.channel = static_cast<int>(
                detail::as_number(detail::require(jn[i], np, "channel"), np + ".channel"));
            nt.omega_n = detail::as_number(detail::require(jn[i], np, "omega_n"), np + ".omega_n");
            notches.push_back(nt);
        }
    }

    ControllerConfig out{ControllerStructure(std::move(channels), std::move(notches)), {}};
    const int n = out.structure.n(), p = out.structure.p();

    out.initial.omega_c =
        detail::as_vector(detail::require(j, root, "omega_c0"), root + ".omega_c0");
    auto opt_vec = [&](const char* key, int len) {
        if (j.contains(key)) return detail::as_vector(j.at(key), root + "." + key);
        return Vector(Vector::Constant(len, 0.5));
    };
    out.initial.beta = opt_vec("beta0", p);
    out.initial.zeta = opt_vec("zeta0", p);
    if (j.contains("scaling")) {
        out.initial.scaling = detail::as_vector(j.at("scaling"), root + ".scaling");
    } else {
        out.initial.scaling = Vector::Ones(n + 2 * p);
        out.initial.scaling.head(n) = out.initial.omega_c;
    }
    try {
        out.initial.validate(out.structure);
    } catch (const std::invalid_argument& e) {
        throw ParseError(root + ": " + e.what());
    }
    return out;
}

inline DirectionMode direction_mode_from_string(const std::string& s) {
    if (s == "raw") return DirectionMode::RawSubgradient;
    if (s == "qp") return DirectionMode::QpSteepest;
    throw ParseError("direction_mode must be \"raw\" or \"qp\", got \"" + s + "\"");
}

inline std::string to_string(DirectionMode m) {
    return m == DirectionMode::RawSubgradient ? "raw" : "qp";
}

inline SolverConfig solver_from_json(const Json& j, const std::string& root = "solver") {
    SolverConfig cfg;
    auto num = [&](const char* key, double& slot) {
        if (j.contains(key)) slot = detail::as_number(j.at(key), root + "." + std::string(key));
    };
    auto integer = [&](const char* key, int& slot) {
        if (j.contains(key))
            slot = static_cast<int>(detail::as_number(j.at(key), root + "." + std::string(key)));
    };
    num("s_max", cfg.s_max);
    num("c_v", cfg.c_v);
    num("c_mu", cfg.c_mu);
    num("mu0", cfg.mu0);
    num("delta_bw", cfg.delta_bw);
    num("delta_h", cfg.delta_h);
    num("stationarity_tol", cfg.stationarity_tol);
    num("feasibility_tol", cfg.feasibility_tol);
    num("steering_tol", cfg.steering_tol);
    num("cache_radius", cfg.cache_radius);
    num("wolfe_c1", cfg.wolfe_c1);
    num("wolfe_c2", cfg.wolfe_c2);
    integer("max_iter", cfg.max_iter);
    integer("max_fun_evals", cfg.max_fun_evals);
    integer("cache_size", cfg.cache_size);
    if (j.contains("direction_mode")) {
        if (!j.at("direction_mode").is_string())
            throw ParseError("field " + root + ".direction_mode must be a string");
        cfg.direction_mode = direction_mode_from_string(j.at("direction_mode").get<std::string>());
    }
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw ParseError(root + ": " + e.what());
    }
    return cfg;
}

inline FrequencyGrid grid_from_json(const Json& j, const std::string& root = "grid") {
    FrequencyGrid g;
    if (j.contains("omega_min")) g.omega_min = detail::as_number(j.at("omega_min"), root + ".omega_min");
    if (j.contains("omega_max")) g.omega_max = detail::as_number(j.at("omega_max"), root + ".omega_max");
    if (j.contains("points"))
        g.points = static_cast<int>(detail::as_number(j.at("points"), root + ".points"));
    return g;
}

// Layered run configuration: the config file supplies plant path (or an inline
// plant object), controller block, solver block and grid; CLI flags override.
struct RunConfig {
    std::string plant_path;       // empty when the plant is inline
    Json inline_plant;            // non-null when inline
    ControllerConfig controller;
    SolverConfig solver;
    FrequencyGrid grid;
    unsigned seed = 0;            // reserved for the experimental restart mode
    int restarts = 0;
};

inline RunConfig load_run_config(const std::string& path) {
    const Json j = detail::load_json_file(path);
    RunConfig rc;
    if (j.contains("plant")) {
        if (j.at("plant").is_string())
            rc.plant_path = j.at("plant").get<std::string>();
        else
            rc.inline_plant = j.at("plant");
    }
    rc.controller = controller_from_json(detail::require(j, "config", "controller"));
    if (j.contains("solver")) rc.solver = solver_from_json(j.at("solver"));
    if (j.contains("grid")) rc.grid = grid_from_json(j.at("grid"));
    if (j.contains("seed"))
        rc.seed = static_cast<unsigned>(detail::as_number(j.at("seed"), "config.seed"));
    return rc;
}

// ---------------------------------------------------------------------------
// Writers. Numeric formatting is pinned ("%.12e") so identical runs produce
// byte-identical artifacts.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12e", x);
    return buf;
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << text;
}

}  // namespace detail

inline constexpr const char* kReportSchemaVersion = "bwopt-report-1";

inline Json report_to_json(const SynthesisReport& rep, const SolverConfig& cfg) {
    Json j;
    j["schema"] = kReportSchemaVersion;
    j["status"] = to_string(rep.status);
    j["direction_mode"] = to_string(cfg.direction_mode);
    j["s_max"] = cfg.s_max;
    j["omega_bw_rad_s"] = rep.omega_bw;
    j["omega_bw_hz"] = rep.omega_bw / (2.0 * M_PI);
    j["hinf"] = rep.hinf;
    j["violation"] = rep.violation;
    j["iterations"] = rep.iterations;
    j["fun_evals"] = rep.fun_evals;
    j["stationarity"] = rep.stationarity_certificate;
    Json theta;
    theta["omega_c"] = detail::vector_to_json(rep.params.omega_c);
    theta["beta"] = detail::vector_to_json(rep.params.beta);
    theta["zeta"] = detail::vector_to_json(rep.params.zeta);
    j["theta"] = std::move(theta);
    return j;
}

inline void write_report(const std::string& path, const SynthesisReport& rep,
                         const SolverConfig& cfg) {
    detail::write_text(path, report_to_json(rep, cfg).dump(2) + "\n");
}

inline void write_history_csv(const std::string& path,
                              const std::vector<IterationRecord>& history) {
    std::ostringstream out;
    out << "# iter [-], objective [rad/s], violation [-], mu [-], step [-], direction_norm [-]\n";
    out << "iter,objective,violation,mu,step,direction_norm\n";
    for (const auto& rec : history) {
        out << rec.iter << ',' << detail::fmt(rec.f) << ',' << detail::fmt(rec.violation) << ','
            << detail::fmt(rec.mu) << ',' << detail::fmt(rec.step) << ','
            << detail::fmt(rec.direction_norm) << '\n';
    }
    detail::write_text(path, out.str());
}

// omega plus all singular values of a transfer matrix over the grid.
inline void write_sigma_csv(const std::string& path, const TransferEvaluator& eval,
                            const FrequencyGrid& grid, const std::string& label) {
    const std::vector<double> ws = grid.omegas();
    std::ostringstream out;
    const Eigen::Index nsv = eval(ws.front()).rows();
    out << "# omega [rad/s], singular values of " << label << " [-], descending\n";
    out << "omega";
    for (Eigen::Index i = 0; i < nsv; ++i) out << ",sigma_" << (i + 1);
    out << '\n';
    for (double w : ws) {
        const Vector sv = eval(w).jacobiSvd().singularValues();
        out << detail::fmt(w);
        for (Eigen::Index i = 0; i < sv.size(); ++i) out << ',' << detail::fmt(sv(i));
        out << '\n';
    }
    detail::write_text(path, out.str());
}

// Per-channel magnitudes plus the largest off-diagonal magnitude per row.
inline void write_channel_csv(const std::string& path, const TransferEvaluator& eval,
                              const FrequencyGrid& grid) {
    const std::vector<double> ws = grid.omegas();
    const Eigen::Index n = eval(ws.front()).rows();
    std::ostringstream out;
    out << "# omega [rad/s], per-channel magnitude |G_ii| and cross-coupling envelope "
           "max_j!=i |G_ij| [-]\n";
    out << "omega";
    for (Eigen::Index i = 0; i < n; ++i) out << ",mag_" << (i + 1) << ",cross_" << (i + 1);
    out << '\n';
    for (double w : ws) {
        const ComplexMatrix g = eval(w);
        out << detail::fmt(w);
        for (Eigen::Index i = 0; i < n; ++i) {
            double cross = 0.0;
            for (Eigen::Index j = 0; j < g.cols(); ++j)
                if (j != i) cross = std::max(cross, std::abs(g(i, j)));
            out << ',' << detail::fmt(std::abs(g(i, i))) << ',' << detail::fmt(cross);
        }
        out << '\n';
    }
    detail::write_text(path, out.str());
}

inline Json controller_to_json(const ControllerStructure& st, const ControllerParams& params) {
    Json j;
    j["channels"] = Json::array();
    for (const auto& c : st.channels())
        j["channels"].push_back(
            {{"modal_mass", c.modal_mass}, {"alpha", c.alpha}, {"z_lp", c.z_lp}});
    j["notches"] = Json::array();
    for (const auto& nt : st.notches())
        j["notches"].push_back({{"channel", nt.channel}, {"omega_n", nt.omega_n}});
    j["omega_c0"] = detail::vector_to_json(params.omega_c);
    j["beta0"] = detail::vector_to_json(params.beta);
    j["zeta0"] = detail::vector_to_json(params.zeta);
    j["scaling"] = detail::vector_to_json(params.scaling);
    return j;
}

}  // namespace bwopt
