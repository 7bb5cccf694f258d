// Acceptance harness: one pass/fail line per criterion, nonzero exit if any
// criterion fails. argv[1] is the path to the bwopt CLI binary (used by the
// determinism criterion); all other criteria exercise the library directly.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "bwopt/io.hpp"
#include "bwopt/nsopt.hpp"
#include "bwopt/plants.hpp"
#include "bwopt/subgrad.hpp"

#include "helpers.hpp"

using namespace bwopt;

namespace {

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool report(int idx, const char* name, bool ok, const std::string& detail) {
    std::printf("[%s] criterion %d: %s (%s)\n", ok ? "PASS" : "FAIL", idx, name, detail.c_str());
    std::fflush(stdout);
    return ok;
}

// --- 1: subgradients vs central finite differences on random smooth fixtures

bool criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937 rng(20240817);
    double worst_obj = 0.0, worst_con = 0.0;
    for (int i = 0; i < 100; ++i) {
        const auto fx = testutil::smooth_fixture(rng);
        const auto r = testutil::finite_difference_check(fx);
        worst_obj = std::max(worst_obj, r.max_rel_err_objective);
        worst_con = std::max(worst_con, r.max_rel_err_constraint);
    }
    const double dt = seconds_since(t0);
    const bool ok = worst_obj <= 1e-4 && worst_con <= 1e-4 && dt < 60.0;
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "100 fixtures, worst rel err objective %.2e, constraint %.2e, %.1f s", worst_obj,
                  worst_con, dt);
    return report(1, "subgradient finite-difference check", ok, buf);
}

// --- 2: min-norm QP vs exhaustive simplex scan

bool criterion_min_norm() {
    std::mt19937 rng(4711);
    double worst_gap = 0.0, worst_opt = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const int m = 2 + static_cast<int>(rng() % 7);   // <= 8
        const int k = 1 + static_cast<int>(rng() % 4);   // <= 4
        const SubdifferentialSet set = testutil::random_set(rng, m, k);
        const Vector got = min_norm_direction(set).direction;
        const Vector want = testutil::brute_force_min_norm(set.as_matrix(), 1e-3);
        worst_gap = std::max(worst_gap, (got - want).norm());
        const double d2 = got.squaredNorm();
        for (int j = 0; j < k; ++j)
            worst_opt = std::max(worst_opt, d2 - set.gradients[j].dot(got));
    }
    const bool ok = worst_gap <= 2e-3 && worst_opt <= 1e-8;
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "50 sets, worst norm gap to the grid scan %.2e, worst optimality defect %.2e",
                  worst_gap, worst_opt);
    return report(2, "min-norm direction vs simplex grid scan", ok, buf);
}

// --- 3: analytic bandwidth and sensitivity-norm cases

bool criterion_analytic() {
    std::mt19937 rng(99);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    double worst_bw = 0.0;
    for (int i = 0; i < 20; ++i) {
        const double wc = std::pow(10.0, 0.5 + 3.0 * uni(rng));
        const auto loop = [wc](double w) {
            return ComplexMatrix::Constant(1, 1, Complex(0.0, -wc / w));
        };
        const double got = compute_bandwidth(loop, FrequencyGrid{}).omega_bw;
        worst_bw = std::max(worst_bw, std::abs(got - wc) / wc);
    }

    // first-order sensitivity s/(s+a): the supremum is exactly 1
    const double a = 30.0;
    const auto sens = [a](double w) {
        const Complex s(0.0, w);
        return ComplexMatrix::Constant(1, 1, s / (s + a));
    };
    const double h1 = compute_sensitivity_peaks(sens, FrequencyGrid{}).hinf;

    // constant matrix: the norm is the top singular value
    ComplexMatrix m0(3, 3);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m0(i, j) = Complex(gauss(rng), gauss(rng));
    const auto flat = [&m0](double) { return m0; };
    const double hc = compute_sensitivity_peaks(flat, FrequencyGrid{0.1, 1e5, 100}).hinf;
    const double smax = m0.jacobiSvd().singularValues()(0);

    const double err_first = std::abs(h1 - 1.0);
    const double err_const = std::abs(hc - smax) / smax;
    const bool ok = worst_bw <= 1e-8 && err_first <= 1e-6 && err_const <= 1e-6;
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "integrator bandwidth err %.2e, first-order hinf err %.2e, constant err %.2e",
                  worst_bw, err_first, err_const);
    return report(3, "analytic bandwidth and hinf cases", ok, buf);
}

// --- 4: nonsmoothness fixtures

bool criterion_nonsmooth_fixtures() {
    // two-axis plant at a common crossover: a two-branch sigma ridge
    const DecoupledPlant plant = make_two_axis({});
    const auto st = testutil::two_axis_structure();
    const auto params = testutil::two_axis_params(377.0);
    const auto bw = compute_bandwidth(make_loop_evaluator(plant, st, params), FrequencyGrid{});
    const bool cluster_ok = bw.cluster.size() == 2;

    const SubdifferentialSet set = objective_subgradients(plant, st, params, bw);
    const Vector d = min_norm_direction(set).direction;
    Vector ridge(2);
    ridge << 1.0, 1.0;
    ridge /= std::sqrt(2.0);
    const bool ridge_ok = cluster_ok && d.dot(ridge) > 0.0;

    auto ascent_rate = [&](Vector dir) {
        dir /= dir.norm();
        double worst = std::numeric_limits<double>::infinity();
        for (const auto& g : set.gradients) worst = std::min(worst, g.dot(dir));
        return worst;
    };
    const double qp_rate = cluster_ok ? ascent_rate(d) : 0.0;
    bool raw_ok = cluster_ok && qp_rate > 0.0;
    double worst_raw = 0.0;
    if (cluster_ok)
        for (const auto& g : set.gradients) {
            const double r = ascent_rate(g);
            worst_raw = std::max(worst_raw, r);
            if (r > 0.5 * qp_rate) raw_ok = false;
        }

    // equal notch depths: two sensitivity peaks of equal height
    const TwoPeakSetup setup = make_two_peak_setup();
    const DecoupledPlant dummy = make_two_peak_dummy();
    const auto loop2 = make_loop_evaluator(dummy, setup.structure, setup.params);
    const auto peaks = compute_sensitivity_peaks(make_sensitivity_evaluator(loop2), FrequencyGrid{});
    const bool peaks_ok = peaks.peaks.size() == 2;

    const bool ok = cluster_ok && ridge_ok && raw_ok && peaks_ok;
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "sigma cluster %zu, QP ridge rate %.3e, worst raw rate %.3e, peaks %zu",
                  bw.cluster.size(), qp_rate, worst_raw, peaks.peaks.size());
    return report(4, "two-axis ridge and two-peak fixtures", ok, buf);
}

// --- 5: toy nonsmooth solve

class ToyMinimax : public NonsmoothProblem {
  public:
    int dimension() const override { return 2; }

    ProblemEvaluation evaluate(const Vector& x) override {
        ProblemEvaluation ev;
        ev.f = std::max(x(0), x(1));
        if (std::abs(x(0) - x(1)) < 1e-9) {
            ev.f_subgradients = Matrix::Zero(2, 2);
            ev.f_subgradients(0, 0) = 1.0;
            ev.f_subgradients(1, 1) = 1.0;
        } else {
            ev.f_subgradients = Matrix::Zero(2, 1);
            ev.f_subgradients(x(0) > x(1) ? 0 : 1, 0) = 1.0;
        }
        ev.constraints = Vector::Constant(1, 1.0 - x(0) - x(1));
        ev.constraint_subgradients = {Matrix::Constant(2, 1, -1.0)};
        return ev;
    }
};

bool criterion_toy_solve() {
    ToyMinimax prob;
    BfgsSqpSolver solver(prob, SolverConfig{});
    Vector x0(2);
    x0 << 2.0, 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    const SolveResult r = solver.solve(x0);
    const double dt = seconds_since(t0);
    const bool ok = r.status == TerminationStatus::Converged && std::abs(r.f - 0.5) <= 1e-6 &&
                    r.iterations <= 100 && dt < 1.0;
    char buf[160];
    std::snprintf(buf, sizeof buf, "f = %.8f, %d iterations, %.3f s, status %s", r.f, r.iterations,
                  dt, to_string(r.status).c_str());
    return report(5, "toy minimax solve", ok, buf);
}

// --- 6/7: seven-channel benchmark ablation and notch benefit

struct BenchmarkRuns {
    SynthesisReport qp, raw, pid;
    double dt_ablation = 0.0;
};

BenchmarkRuns run_benchmark() {
    PlantRecipe r;
    r.kind = PlantKind::FlexstageLike;
    const DecoupledPlant plant = make_flexstage_like(r);
    const FlexstageSetup notch = make_flexstage_setup(r, true);
    const FlexstageSetup pid = make_flexstage_setup(r, false);

    BenchmarkRuns out;
    SolverConfig cfg;  // defaults: s_max = 2, c_v = 0.7, c_mu = 0.3
    const auto t0 = std::chrono::steady_clock::now();
    cfg.direction_mode = DirectionMode::QpSteepest;
    out.qp = synthesize(plant, notch.structure, notch.params, cfg, FrequencyGrid{});
    cfg.direction_mode = DirectionMode::RawSubgradient;
    out.raw = synthesize(plant, notch.structure, notch.params, cfg, FrequencyGrid{});
    out.dt_ablation = seconds_since(t0);
    cfg.direction_mode = DirectionMode::QpSteepest;
    out.pid = synthesize(plant, pid.structure, pid.params, cfg, FrequencyGrid{});
    return out;
}

bool criterion_ablation(const BenchmarkRuns& b) {
    const SolverConfig cfg;
    const double agree = std::abs(b.qp.omega_bw - b.raw.omega_bw) /
                         std::max(b.qp.omega_bw, b.raw.omega_bw);
    const bool feasible = b.qp.violation <= cfg.feasibility_tol &&
                          b.raw.violation <= cfg.feasibility_tol &&
                          b.qp.hinf <= cfg.s_max + 1e-6 && b.raw.hinf <= cfg.s_max + 1e-6;
    const bool fewer = b.qp.iterations < b.raw.iterations && b.qp.fun_evals < b.raw.fun_evals;
    const bool ok = feasible && agree <= 0.005 && fewer && b.dt_ablation < 300.0;
    char buf[240];
    std::snprintf(buf, sizeof buf,
                  "qp %.4f rad/s (%d it, %d ev) vs raw %.4f rad/s (%d it, %d ev), "
                  "agreement %.4f%%, hinf %.6f/%.6f, %.0f s",
                  b.qp.omega_bw, b.qp.iterations, b.qp.fun_evals, b.raw.omega_bw,
                  b.raw.iterations, b.raw.fun_evals, 100.0 * agree, b.qp.hinf, b.raw.hinf,
                  b.dt_ablation);
    return report(6, "qp vs raw direction ablation", ok, buf);
}

bool criterion_notch_benefit(const BenchmarkRuns& b) {
    const SolverConfig cfg;
    const double ratio = b.qp.omega_bw / b.pid.omega_bw;
    const bool ok = ratio >= 1.05 && b.pid.violation <= cfg.feasibility_tol &&
                    b.qp.violation <= cfg.feasibility_tol;
    char buf[160];
    std::snprintf(buf, sizeof buf, "notched %.4f rad/s vs pid-only %.4f rad/s, ratio %.4f",
                  b.qp.omega_bw, b.pid.omega_bw, ratio);
    return report(7, "notch filters lift the optimal bandwidth", ok, buf);
}

// --- 8: byte-identical artifacts from identical CLI runs

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool run_cli(const std::string& cli, const std::string& cfg, const std::string& out) {
    const std::string cmd =
        "\"" + cli + "\" synthesize --config \"" + cfg + "\" --out \"" + out + "\" > /dev/null";
    const int rc = std::system(cmd.c_str());
    if (!WIFEXITED(rc)) return false;
    const int code = WEXITSTATUS(rc);
    return code == 0 || code == 2;  // a truncated-budget run is still a valid artifact
}

bool criterion_determinism(const std::string& cli) {
    namespace fs = std::filesystem;
    if (cli.empty()) return report(8, "byte-identical repeated runs", false, "no CLI path given");

    const fs::path root = fs::temp_directory_path() / "bwopt_acceptance";
    fs::remove_all(root);
    fs::create_directories(root);

    // short benchmark run assembled from the bundled seven-channel setup
    PlantRecipe r;
    r.kind = PlantKind::FlexstageLike;
    const FlexstageSetup setup = make_flexstage_setup(r, true);
    Json cfg;
    cfg["plant"] = "builtin:flexstage";
    Json jch = Json::array();
    for (const auto& ch : setup.structure.channels())
        jch.push_back({{"modal_mass", ch.modal_mass}, {"alpha", ch.alpha}, {"z_lp", ch.z_lp}});
    Json jn = Json::array();
    for (const auto& nt : setup.structure.notches())
        jn.push_back({{"channel", nt.channel}, {"omega_n", nt.omega_n}});
    Json jc;
    jc["channels"] = std::move(jch);
    jc["notches"] = std::move(jn);
    jc["omega_c0"] = detail::vector_to_json(setup.params.omega_c);
    jc["beta0"] = detail::vector_to_json(setup.params.beta);
    jc["zeta0"] = detail::vector_to_json(setup.params.zeta);
    cfg["controller"] = std::move(jc);
    cfg["solver"] = {{"max_iter", 12}};
    const fs::path cfg_path = root / "config.json";
    std::ofstream(cfg_path) << cfg.dump(2) << "\n";

    const fs::path out_a = root / "a", out_b = root / "b";
    if (!run_cli(cli, cfg_path.string(), out_a.string()) ||
        !run_cli(cli, cfg_path.string(), out_b.string()))
        return report(8, "byte-identical repeated runs", false, "CLI run failed");

    const bool report_same = slurp(out_a / "report.json") == slurp(out_b / "report.json");
    const bool history_same = slurp(out_a / "history.csv") == slurp(out_b / "history.csv");
    const bool nonempty = !slurp(out_a / "report.json").empty();
    const bool ok = report_same && history_same && nonempty;
    char buf[120];
    std::snprintf(buf, sizeof buf, "report.json %s, history.csv %s",
                  report_same ? "identical" : "differs", history_same ? "identical" : "differs");
    return report(8, "byte-identical repeated runs", ok, buf);
}

}  // namespace

int main(int argc, char** argv) {
    const std::string cli = argc > 1 ? argv[1] : "";
    int failures = 0;

    failures += !criterion_gradients();
    failures += !criterion_min_norm();
    failures += !criterion_analytic();
    failures += !criterion_nonsmooth_fixtures();
    failures += !criterion_toy_solve();
    const BenchmarkRuns bench = run_benchmark();
    failures += !criterion_ablation(bench);
    failures += !criterion_notch_benefit(bench);
    failures += !criterion_determinism(cli);

    std::printf("%d/8 criteria passed\n", 8 - failures);
    return failures == 0 ? 0 : 1;
}
