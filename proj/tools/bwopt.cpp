// bwopt: bandwidth-optimal decentralized controller synthesis.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>

#include <CLI11.hpp>

#include "bwopt/io.hpp"
#include "bwopt/nsopt.hpp"
#include "bwopt/plants.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitNotConverged = 2;
constexpr int kExitInputError = 3;

struct CliOverrides {
    std::string plant;
    std::string config;
    std::string out = ".";
    std::string direction_mode;
    double smax = -1.0;
    int max_iter = -1;
    unsigned seed = 0;
    bool seed_set = false;
    int restarts = 0;
};

bwopt::DecoupledPlant resolve_plant(const bwopt::RunConfig& rc, const std::string& override_path) {
    const std::string& src = !override_path.empty() ? override_path : rc.plant_path;
    if (src.empty()) {
        if (!rc.inline_plant.is_null()) return bwopt::plant_from_json(rc.inline_plant);
        throw bwopt::ParseError("no plant given: use --plant or a \"plant\" config entry");
    }
    if (src == "builtin:flexstage") {
        bwopt::PlantRecipe r;
        r.kind = bwopt::PlantKind::FlexstageLike;
        return bwopt::make_plant(r);
    }
    if (src == "builtin:two_axis") return bwopt::make_plant({});
    if (src == "builtin:two_peak") {
        bwopt::PlantRecipe r;
        r.kind = bwopt::PlantKind::TwoPeakDummy;
        return bwopt::make_plant(r);
    }
    return bwopt::load_plant(src);
}

bwopt::RunConfig load_with_overrides(const CliOverrides& cli) {
    bwopt::RunConfig rc = bwopt::load_run_config(cli.config);
    if (!cli.direction_mode.empty())
        rc.solver.direction_mode = bwopt::direction_mode_from_string(cli.direction_mode);
    if (cli.smax > 0.0) rc.solver.s_max = cli.smax;
    if (cli.max_iter > 0) rc.solver.max_iter = cli.max_iter;
    if (cli.seed_set) rc.seed = cli.seed;
    rc.restarts = cli.restarts;
    rc.solver.validate();
    return rc;
}

int cmd_synthesize(const CliOverrides& cli) {
    bwopt::RunConfig rc = load_with_overrides(cli);
    const bwopt::DecoupledPlant plant = resolve_plant(rc, cli.plant);
    std::filesystem::create_directories(cli.out);

    if (rc.restarts > 0)
        std::cerr << "note: --restarts is experimental; seed " << rc.seed
                  << " only perturbs restart points, the base run is deterministic\n";

    bwopt::SynthesisReport rep;
    try {
        rep = bwopt::synthesize(plant, rc.controller.structure, rc.controller.initial, rc.solver,
                                rc.grid);
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInputError;
    }

    if (rc.restarts > 0) {
        std::mt19937 rng(rc.seed);
        std::uniform_real_distribution<double> jitter(0.8, 1.25);
        for (int r = 0; r < rc.restarts; ++r) {
            bwopt::ControllerParams p0 = rc.controller.initial;
            for (Eigen::Index i = 0; i < p0.omega_c.size(); ++i) p0.omega_c(i) *= jitter(rng);
            try {
                bwopt::SynthesisReport alt = bwopt::synthesize(
                    plant, rc.controller.structure, p0, rc.solver, rc.grid);
                const bool feasible = alt.violation <= rc.solver.feasibility_tol;
                if (feasible && alt.omega_bw > rep.omega_bw) rep = alt;
            } catch (const std::runtime_error&) {
                // infeasible restart point, skip
            }
        }
    }

    const std::filesystem::path out(cli.out);
    bwopt::write_report((out / "report.json").string(), rep, rc.solver);
    bwopt::write_history_csv((out / "history.csv").string(), rep.history);
    const auto loop =
        bwopt::make_loop_evaluator(plant, rc.controller.structure, rep.params);
    bwopt::write_sigma_csv((out / "loopgain.csv").string(), loop, rc.grid, "L = G C");
    bwopt::write_sigma_csv((out / "sensitivity.csv").string(),
                           bwopt::make_sensitivity_evaluator(loop), rc.grid, "S = (I + L)^-1");
    bwopt::detail::write_text(
        (out / "controller.json").string(),
        bwopt::controller_to_json(rc.controller.structure, rep.params).dump(2) + "\n");

    std::cout << bwopt::to_string(rep.status) << ": omega_bw = " << rep.omega_bw
              << " rad/s, hinf = " << rep.hinf << ", iterations = " << rep.iterations
              << ", fun_evals = " << rep.fun_evals << '\n';
    return rep.status == bwopt::TerminationStatus::Converged ? kExitOk : kExitNotConverged;
}

int cmd_analyze(const CliOverrides& cli) {
    bwopt::RunConfig rc = load_with_overrides(cli);
    const bwopt::DecoupledPlant plant = resolve_plant(rc, cli.plant);
    std::filesystem::create_directories(cli.out);
    const std::filesystem::path out(cli.out);

    const auto& st = rc.controller.structure;
    const auto& params = rc.controller.initial;

    bwopt::TransferEvaluator plant_eval = [&](double w) {
        return bwopt::eval_plant(plant, w).value;
    };
    bwopt::write_channel_csv((out / "plant.csv").string(), plant_eval, rc.grid);

    const auto loop = bwopt::make_loop_evaluator(plant, st, params);
    bwopt::write_sigma_csv((out / "loopgain.csv").string(), loop, rc.grid, "L = G C");
    bwopt::write_sigma_csv((out / "sensitivity.csv").string(),
                           bwopt::make_sensitivity_evaluator(loop), rc.grid, "S = (I + L)^-1");

    const auto stab = bwopt::check_stability(plant, st, params);
    bwopt::Json j;
    j["schema"] = "bwopt-analysis-1";
    j["stable"] = stab.stable;
    j["spectral_abscissa"] = stab.spectral_abscissa;
    if (stab.stable) {
        const auto bw = bwopt::compute_bandwidth(loop, rc.grid, rc.solver.delta_bw);
        const auto peaks = bwopt::compute_sensitivity_peaks(
            bwopt::make_sensitivity_evaluator(loop), rc.grid, rc.solver.delta_h);
        j["omega_bw_rad_s"] = bw.omega_bw;
        j["omega_bw_hz"] = bw.omega_bw / (2.0 * M_PI);
        j["hinf"] = peaks.hinf;
    }
    bwopt::detail::write_text((out / "analysis.json").string(), j.dump(2) + "\n");

    std::cout << (stab.stable ? "stable" : "UNSTABLE")
              << ", spectral abscissa = " << stab.spectral_abscissa << '\n';
    if (stab.stable)
        std::cout << "omega_bw = " << j["omega_bw_rad_s"].get<double>()
                  << " rad/s, hinf = " << j["hinf"].get<double>() << '\n';
    return kExitOk;
}

int cmd_validate(const CliOverrides& cli) {
    bwopt::RunConfig rc = load_with_overrides(cli);
    const bwopt::DecoupledPlant plant = resolve_plant(rc, cli.plant);
    std::cout << "ok: plant with " << plant.n_channels() << " channels, controller with "
              << rc.controller.structure.n() << " channels and " << rc.controller.structure.p()
              << " notches\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bandwidth-optimal decentralized motion controller synthesis"};
    app.require_subcommand(1);

    CliOverrides cli;
    std::string mode;

    auto add_common = [&](CLI::App* sub, bool needs_out) {
        sub->add_option("--plant", cli.plant, "plant JSON file or builtin:{flexstage,two_axis,two_peak}");
        sub->add_option("--config", cli.config, "run configuration JSON file")->required();
        if (needs_out) sub->add_option("--out", cli.out, "output directory");
        sub->add_option("--direction-mode", cli.direction_mode, "search direction: raw or qp")
            ->check(CLI::IsMember({"raw", "qp"}));
        sub->add_option("--smax", cli.smax, "robustness bound on the sensitivity norm");
        sub->add_option("--max-iter", cli.max_iter, "iteration budget");
        sub->add_option("--seed", cli.seed, "seed for the experimental restart mode")
            ->each([&](const std::string&) { cli.seed_set = true; });
    };

    CLI::App* synth = app.add_subcommand("synthesize", "optimize the controller");
    add_common(synth, true);
    synth->add_option("--restarts", cli.restarts,
                      "experimental: number of randomized restarts (default 0)");

    CLI::App* analyze = app.add_subcommand("analyze", "frequency response of a fixed controller");
    add_common(analyze, true);

    CLI::App* validate = app.add_subcommand("validate", "parse and validate inputs only");
    add_common(validate, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synthesize(cli);
        if (analyze->parsed()) return cmd_analyze(cli);
        if (validate->parsed()) return cmd_validate(cli);
    } catch (const bwopt::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInputError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInputError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInputError;
    }
    return kExitInputError;
}
