#pragma once

// Shared fixtures and brute-force oracles used by both the unit tests and the
// acceptance harness.

#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "bwopt/freq.hpp"
#include "bwopt/lti.hpp"
#include "bwopt/nsopt.hpp"
#include "bwopt/plants.hpp"
#include "bwopt/subgrad.hpp"

namespace testutil {

using bwopt::Complex;
using bwopt::ComplexMatrix;
using bwopt::Matrix;
using bwopt::Vector;

// Two rigid PID channels on the two-axis plant at a common crossover; at
// omega_cx = omega_cy the bandwidth sits on a two-branch sigma ridge.
inline bwopt::ControllerStructure two_axis_structure() {
    return bwopt::ControllerStructure(std::vector<bwopt::PidLowpassSpec>(2), {});
}

inline bwopt::ControllerParams two_axis_params(double omega_c) {
    bwopt::ControllerParams p;
    p.omega_c = Vector::Constant(2, omega_c);
    p.beta = Vector(0);
    p.zeta = Vector(0);
    p.scaling = Vector::Ones(2);
    return p;
}

// A randomized synthesis instance that is smooth at its evaluation point:
// decoupled double-integrator channels with spread crossovers, so the sigma
// cluster at the bandwidth and the sensitivity peak are both singletons.
struct SmoothFixture {
    bwopt::DecoupledPlant plant;
    bwopt::ControllerStructure structure;
    bwopt::ControllerParams params;
    bwopt::FrequencyGrid grid;
};

inline std::optional<SmoothFixture> try_smooth_fixture(std::mt19937& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const int n = 2 + static_cast<int>(uni(rng) * 6.0);  // 2..7 channels

    Vector mass(n), damping(n), stiffness(n);
    Matrix p_map = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        mass(i) = 0.5 + 4.5 * uni(rng);
        // a damped suspension mode below the crossover band; without it the
        // loop would be scale-invariant in omega_c and the sensitivity norm
        // would not depend on the decision variables at all
        const double w0 = 20.0 + 40.0 * uni(rng);
        const double z0 = 0.1 + 0.4 * uni(rng);
        stiffness(i) = mass(i) * w0 * w0;
        damping(i) = 2.0 * z0 * std::sqrt(stiffness(i) * mass(i));
        p_map(i, i) = 0.7 + 0.7 * uni(rng);  // static gain detune per channel
    }
    bwopt::ModalPlant base(mass, damping, stiffness, p_map, Matrix::Identity(n, n));
    bwopt::DecoupledPlant plant(std::move(base), Matrix::Identity(n, n), Matrix::Identity(n, n));

    std::vector<bwopt::PidLowpassSpec> channels(n);
    Vector omega_c(n);
    for (int i = 0; i < n; ++i) {
        channels[i].modal_mass = mass(i);
        // spread the crossovers so no two sigma branches cross unity together
        omega_c(i) = 180.0 * std::pow(1.3, i) * (0.92 + 0.16 * uni(rng));
    }

    std::vector<bwopt::NotchSpec> notches;
    if (uni(rng) < 0.5) notches.push_back({0, 2.5 * omega_c(0)});
    bwopt::ControllerStructure st(std::move(channels), std::move(notches));

    bwopt::ControllerParams params;
    params.omega_c = omega_c;
    params.beta = Vector::Constant(st.p(), 0.4 + 0.4 * uni(rng));
    params.zeta = Vector::Constant(st.p(), 0.4 + 0.5 * uni(rng));
    params.scaling = Vector::Ones(st.m());
    params.scaling.head(n) = omega_c;

    bwopt::FrequencyGrid grid{1.0, 2e4, 400};

    if (!bwopt::check_stability(plant, st, params).stable) return std::nullopt;
    const auto loop = bwopt::make_loop_evaluator(plant, st, params);
    try {
        const auto bw = bwopt::compute_bandwidth(loop, grid);
        if (bw.cluster.size() != 1) return std::nullopt;
        const auto peaks =
            bwopt::compute_sensitivity_peaks(bwopt::make_sensitivity_evaluator(loop), grid);
        if (peaks.peaks.size() != 1 || peaks.peaks.front().cluster.size() != 1)
            return std::nullopt;
    } catch (const std::runtime_error&) {
        return std::nullopt;
    }
    return SmoothFixture{std::move(plant), std::move(st), std::move(params), grid};
}

inline SmoothFixture smooth_fixture(std::mt19937& rng) {
    for (int attempt = 0; attempt < 64; ++attempt)
        if (auto f = try_smooth_fixture(rng)) return *std::move(f);
    throw std::runtime_error("smooth_fixture: no smooth instance after 64 draws");
}

// Central finite differences of (omega_bw, hinf) at the fixture point; the
// step is taken in the scaled decision space so every coordinate is O(1).
struct FdResult {
    double max_rel_err_objective = 0.0;
    double max_rel_err_constraint = 0.0;
};

inline FdResult finite_difference_check(const SmoothFixture& fx, double h = 1e-3) {
    const auto eval_at = [&](const Vector& scaled) {
        const bwopt::ControllerParams p = bwopt::ControllerParams::from_vector(
            fx.structure, bwopt::unscale_params(scaled, fx.params.scaling), fx.params.scaling);
        const auto loop = bwopt::make_loop_evaluator(fx.plant, fx.structure, p);
        const double wbw = bwopt::compute_bandwidth(loop, fx.grid).omega_bw;
        const double hinf =
            bwopt::compute_sensitivity_peaks(bwopt::make_sensitivity_evaluator(loop), fx.grid)
                .hinf;
        return std::make_pair(wbw, hinf);
    };

    const auto loop = bwopt::make_loop_evaluator(fx.plant, fx.structure, fx.params);
    const auto bw = bwopt::compute_bandwidth(loop, fx.grid);
    const auto peaks =
        bwopt::compute_sensitivity_peaks(bwopt::make_sensitivity_evaluator(loop), fx.grid);
    const Vector g_obj =
        bwopt::objective_subgradients(fx.plant, fx.structure, fx.params, bw).gradients.front();
    const Vector g_con =
        bwopt::constraint_subgradients(fx.plant, fx.structure, fx.params, peaks)
            .gradients.front();

    const Vector theta0 = bwopt::scale_params(fx.params.to_vector(), fx.params.scaling);
    FdResult out;
    for (int i = 0; i < fx.structure.m(); ++i) {
        Vector tp = theta0, tm = theta0;
        tp(i) += h;
        tm(i) -= h;
        const auto [f_p, c_p] = eval_at(tp);
        const auto [f_m, c_m] = eval_at(tm);
        // analytic gradients are w.r.t. physical parameters; chain through
        // the per-coordinate scaling
        const double fd_obj = (f_p - f_m) / (2.0 * h) / fx.params.scaling(i);
        const double fd_con = (c_p - c_m) / (2.0 * h) / fx.params.scaling(i);
        const double scale_obj = std::max(std::abs(g_obj(i)), 1e-3 * g_obj.cwiseAbs().maxCoeff());
        const double scale_con = std::max(std::abs(g_con(i)), 1e-3 * g_con.cwiseAbs().maxCoeff());
        out.max_rel_err_objective =
            std::max(out.max_rel_err_objective, std::abs(fd_obj - g_obj(i)) / scale_obj);
        out.max_rel_err_constraint =
            std::max(out.max_rel_err_constraint, std::abs(fd_con - g_con(i)) / scale_con);
    }
    return out;
}

// Brute-force min-norm point over the simplex: exhaustive grid with the given
// step in the weights. For k = 4 the innermost weight pair is scanned through
// the exact one-dimensional quadratic, so the scan stays tractable.
inline Vector brute_force_min_norm(const Matrix& g, double step) {
    const Eigen::Index k = g.cols();
    const int steps = static_cast<int>(std::lround(1.0 / step));
    double best = std::numeric_limits<double>::infinity();
    Vector best_x = g.col(0);

    auto consider = [&](const Vector& x) {
        const double n2 = x.squaredNorm();
        if (n2 < best) {
            best = n2;
            best_x = x;
        }
    };

    if (k == 1) return g.col(0);
    if (k == 2) {
        for (int i = 0; i <= steps; ++i) {
            const double l = i * step;
            consider(l * g.col(0) + (1.0 - l) * g.col(1));
        }
        return best_x;
    }
    if (k == 3) {
        for (int i = 0; i <= steps; ++i)
            for (int j = 0; i + j <= steps; ++j) {
                const double l1 = i * step, l2 = j * step;
                consider(l1 * g.col(0) + l2 * g.col(1) + (1.0 - l1 - l2) * g.col(2));
            }
        return best_x;
    }

    // k == 4: ||base + t diff||^2 is quadratic in the grid index t
    const Vector diff = g.col(2) - g.col(3);
    const double dd = diff.squaredNorm();
    for (int i = 0; i <= steps; ++i)
        for (int j = 0; i + j <= steps; ++j) {
            const double l1 = i * step, l2 = j * step;
            const double rem = 1.0 - l1 - l2;
            const Vector base = l1 * g.col(0) + l2 * g.col(1) + rem * g.col(3);
            const double bb = base.squaredNorm(), bd = base.dot(diff);
            int best_t = 0;
            double best_q = bb;
            for (int t = 1; t <= steps - i - j; ++t) {
                const double l3 = t * step;
                const double q = bb + 2.0 * l3 * bd + l3 * l3 * dd;
                if (q < best_q) {
                    best_q = q;
                    best_t = t;
                }
            }
            if (best_q < best) consider(base + (best_t * step) * diff);
        }
    return best_x;
}

// Random subdifferential set for the min-norm oracle comparison.
inline bwopt::SubdifferentialSet random_set(std::mt19937& rng, int m, int k) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    bwopt::SubdifferentialSet set;
    for (int j = 0; j < k; ++j) {
        Vector g(m);
        for (int i = 0; i < m; ++i) g(i) = gauss(rng);
        set.gradients.push_back(std::move(g));
        set.provenance.push_back({0.0, j});
    }
    return set;
}

}  // namespace testutil
