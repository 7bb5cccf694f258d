#pragma once

// Clarke subgradients of the bandwidth objective and the H-infinity
// sensitivity constraint, and the min-norm-point QP over their convex hulls.

#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "bwopt/controller.hpp"
#include "bwopt/freq.hpp"
#include "bwopt/lti.hpp"

namespace bwopt {

struct SubgradientProvenance {
    double omega = 0.0;
    int sigma_index = 0;  // position within the cluster at that frequency
};

struct SubdifferentialSet {
    std::vector<Vector> gradients;  // each of length m
    std::vector<SubgradientProvenance> provenance;

    Matrix as_matrix() const {
        if (gradients.empty()) throw std::logic_error("SubdifferentialSet: empty");
        Matrix g(gradients.front().size(), gradients.size());
        for (std::size_t i = 0; i < gradients.size(); ++i) g.col(i) = gradients[i];
        return g;
    }
};

// Subgradients g_l of omega_bw w.r.t. theta_c via the implicit function
// theorem on sigma_min(L(j omega_bw)) = 1:
//   g_l = -(d sigma_l / d theta_c) / (d sigma_l / d omega).
inline SubdifferentialSet objective_subgradients(const DecoupledPlant& plant,
                                                 const ControllerStructure& st,
                                                 const ControllerParams& params,
                                                 const BandwidthResult& bw) {
    if (bw.cluster.empty())
        throw std::invalid_argument("objective_subgradients: empty sigma cluster");
    const double w = bw.omega_bw;
    const ComplexMatrix g = eval_plant(plant, w).value;
    const ComplexMatrix c = eval_controller(st, params, w).value;
    const ComplexMatrix dl_dw =
        plant_omega_derivative(plant, w) * c + g * controller_omega_derivative(st, params, w);

    std::vector<ComplexMatrix> gdc(st.m());
    for (int i = 0; i < st.m(); ++i)
        gdc[i] = g * controller_param_derivative(st, params, w, i).value;

    SubdifferentialSet out;
    for (std::size_t l = 0; l < bw.cluster.size(); ++l) {
        const auto& trip = bw.cluster[l];
        const double dsig_dw = (trip.u.adjoint() * dl_dw * trip.v)(0).real();
        if (std::abs(dsig_dw) < 1e-12)
            throw std::runtime_error(
                "objective_subgradients: tangential crossing, d sigma/d omega vanishes at the "
                "crossover");
        Vector grad(st.m());
        for (int i = 0; i < st.m(); ++i)
            grad(i) = -(trip.u.adjoint() * gdc[i] * trip.v)(0).real() / dsig_dw;
        out.gradients.push_back(std::move(grad));
        out.provenance.push_back({w, static_cast<int>(l)});
    }
    return out;
}

// Subgradients h_il of ||S||_inf:  h_il = Re[u* (-S G dC/dtheta S) v] for every
// peak frequency and every cluster member.
inline SubdifferentialSet constraint_subgradients(const DecoupledPlant& plant,
                                                  const ControllerStructure& st,
                                                  const ControllerParams& params,
                                                  const SensitivityPeaks& peaks) {
    if (peaks.peaks.empty())
        throw std::invalid_argument("constraint_subgradients: no sensitivity peaks");

    SubdifferentialSet out;
    for (const auto& peak : peaks.peaks) {
        const double w = peak.omega;
        const ComplexMatrix g = eval_plant(plant, w).value;
        const ComplexMatrix c = eval_controller(st, params, w).value;
        const ComplexMatrix s =
            eval_sensitivity({w, g * c}).value;
        const ComplexMatrix minus_sg = -s * g;

        std::vector<ComplexMatrix> ds(st.m());
        for (int i = 0; i < st.m(); ++i)
            ds[i] = minus_sg * controller_param_derivative(st, params, w, i).value * s;

        for (std::size_t l = 0; l < peak.cluster.size(); ++l) {
            const auto& trip = peak.cluster[l];
            Vector grad(st.m());
            for (int i = 0; i < st.m(); ++i)
                grad(i) = (trip.u.adjoint() * ds[i] * trip.v)(0).real();
            out.gradients.push_back(std::move(grad));
            out.provenance.push_back({w, static_cast<int>(l)});
        }
    }
    return out;
}

struct MinNormResult {
    Vector direction;  // min-norm element of conv{g_l}
    Vector weights;    // certifying simplex weights, one per input vector
};

// Wolfe's min-norm-point algorithm over the simplex: iterative affine-hull
// projection with vertex add/drop.
inline MinNormResult min_norm_direction(const SubdifferentialSet& set) {
    if (set.gradients.empty())
        throw std::invalid_argument("min_norm_direction: empty subdifferential set");
    const Matrix g = set.as_matrix();
    const Eigen::Index k = g.cols();
    if (k == 1) {
        return {g.col(0), Vector::Ones(1)};
    }

    std::vector<Eigen::Index> active;
    Vector lambda_active;

    // start from the smallest-norm vertex
    Eigen::Index start = 0;
    double best = g.col(0).squaredNorm();
    for (Eigen::Index j = 1; j < k; ++j) {
        const double nj = g.col(j).squaredNorm();
        if (nj < best) {
            best = nj;
            start = j;
        }
    }
    active.push_back(start);
    lambda_active = Vector::Ones(1);

    auto point = [&]() {
        Vector x = Vector::Zero(g.rows());
        for (std::size_t i = 0; i < active.size(); ++i)
            x += lambda_active(i) * g.col(active[i]);
        return x;
    };

    // min-norm point of the affine hull of the active columns
    auto affine_min = [&](const std::vector<Eigen::Index>& idx) {
        const Eigen::Index na = static_cast<Eigen::Index>(idx.size());
        Matrix kkt = Matrix::Zero(na + 1, na + 1);
        for (Eigen::Index i = 0; i < na; ++i)
            for (Eigen::Index j = 0; j < na; ++j)
                kkt(i, j) = g.col(idx[i]).dot(g.col(idx[j]));
        kkt.row(na).head(na).setOnes();
        kkt.col(na).head(na).setOnes();
        Vector rhs = Vector::Zero(na + 1);
        rhs(na) = 1.0;
        Vector sol = kkt.fullPivLu().solve(rhs);
        return sol.head(na).eval();
    };

    const int max_iter = 200;
    for (int it = 0; it < max_iter; ++it) {
        const Vector x = point();
        const double xx = x.squaredNorm();

        // optimality: x' g_j >= x' x for all vertices (within tolerance)
        Eigen::Index enter = -1;
        double lowest = xx - 1e-10 * std::max(xx, 1e-30);
        for (Eigen::Index j = 0; j < k; ++j) {
            const double proj = x.dot(g.col(j));
            if (proj < lowest) {
                lowest = proj;
                enter = j;
            }
        }
        if (enter < 0) break;
        bool already = false;
        for (auto idx : active) already = already || (idx == enter);
        if (already) break;

        active.push_back(enter);
        lambda_active.conservativeResize(active.size());
        lambda_active(active.size() - 1) = 0.0;

        // restore feasibility of the affine solution over the active set
        for (;;) {
            const Vector w = affine_min(active);
            if (!w.allFinite()) {  // degenerate (e.g. duplicated) columns
                it = max_iter;
                break;
            }
            if ((w.array() > 1e-12).all()) {
                lambda_active = w;
                break;
            }
            // largest step toward w that keeps lambda nonnegative
            double t = 1.0;
            for (Eigen::Index i = 0; i < w.size(); ++i) {
                if (w(i) < lambda_active(i)) {
                    const double ti = lambda_active(i) / (lambda_active(i) - w(i));
                    t = std::min(t, ti);
                }
            }
            lambda_active = lambda_active + t * (w - lambda_active);
            // drop vanished vertices
            std::vector<Eigen::Index> new_active;
            Vector new_lambda(lambda_active.size());
            Eigen::Index cnt = 0;
            for (std::size_t i = 0; i < active.size(); ++i) {
                if (lambda_active(i) > 1e-12) {
                    new_active.push_back(active[i]);
                    new_lambda(cnt++) = lambda_active(i);
                }
            }
            active = std::move(new_active);
            lambda_active = new_lambda.head(cnt);
            if (static_cast<Eigen::Index>(active.size()) == cnt && cnt == 1) break;
        }
    }

    MinNormResult out;
    out.weights = Vector::Zero(k);
    for (std::size_t i = 0; i < active.size(); ++i) out.weights(active[i]) += lambda_active(i);
    out.weights /= out.weights.sum();
    out.direction = g * out.weights;
    return out;
}

}  // namespace bwopt
