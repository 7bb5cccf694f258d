#pragma once

// Synthetic test plants: the two-axis crossover fixture, the two-peak
// sensitivity fixture, and a FleXstage-like 7-channel modal plant.

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bwopt/controller.hpp"
#include "bwopt/lti.hpp"

namespace bwopt {

enum class PlantKind { TwoAxis, TwoPeakDummy, FlexstageLike };

struct PlantRecipe {
    PlantKind kind = PlantKind::TwoAxis;

    // TwoAxis knobs
    double coupling = 0.05;       // parasitic cross-coupling gain
    double detune = 0.02;         // static gain detune of the y axis
    double parasitic_hz_1 = 606.0;
    double parasitic_hz_2 = 744.0;
    double parasitic_damping = 0.02;

    // FlexstageLike knobs
    double flexible_hz = 50.0;
    double flexible_damping = 0.2;
    double flex_coupling = 0.2;   // scales parasitic-mode participation
};

namespace detail {

inline DecoupledPlant assemble(const std::vector<double>& m, const std::vector<double>& d,
                               const std::vector<double>& k, const Matrix& p, const Matrix& q) {
    const auto n = static_cast<Eigen::Index>(m.size());
    Vector mv(n), dv(n), kv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        mv(i) = m[i];
        dv(i) = d[i];
        kv(i) = k[i];
    }
    ModalPlant base(mv, dv, kv, p, q);
    const Matrix identity_u = Matrix::Identity(p.cols(), p.cols());
    const Matrix identity_y = Matrix::Identity(q.rows(), q.rows());
    return DecoupledPlant(std::move(base), identity_u, identity_y);
}

}  // namespace detail

// Two rigid axes plus two lightly damped parasitic modes that couple them.
// With coupling = 0 the axes are exactly decoupled. The y axis carries a small
// static detune so the two sigma branches at the crossover are numerically
// distinct yet clustered.
inline DecoupledPlant make_two_axis(const PlantRecipe& r) {
    const double w1 = 2.0 * M_PI * r.parasitic_hz_1;
    const double w2 = 2.0 * M_PI * r.parasitic_hz_2;
    std::vector<double> m{1.0, 1.0, 1.0, 1.0};
    std::vector<double> d{0.0, 0.0, 2.0 * r.parasitic_damping * w1, 2.0 * r.parasitic_damping * w2};
    std::vector<double> k{0.0, 0.0, w1 * w1, w2 * w2};

    Matrix p(4, 2), q(2, 4);
    p << 1.0, 0.0,
         0.0, 1.0 + r.detune,
         r.coupling, 0.6 * r.coupling,
         -0.4 * r.coupling, r.coupling;
    q << 1.0, 0.0, 0.8, -0.5,
         0.0, 1.0, 0.6, 0.9;
    return detail::assemble(m, d, k, p, q);
}

// Two identical double-integrator channels; the two-peak sensitivity shape
// comes from the companion controller structure (one notch per channel at
// rho-scaled frequencies), see two_peak_structure().
inline DecoupledPlant make_two_peak_dummy() {
    std::vector<double> m{1.0, 1.0}, d{0.0, 0.0}, k{0.0, 0.0};
    return detail::assemble(m, d, k, Matrix::Identity(2, 2), Matrix::Identity(2, 2));
}

// Companion controller structure for the two-peak fixture. Channel 2 is an
// exact frequency-scaled copy of channel 1 (scale rho), so equal notch depths
// produce two sensitivity peaks of identical height at distinct frequencies.
struct TwoPeakSetup {
    ControllerStructure structure;
    ControllerParams params;
    double rho;
};

inline TwoPeakSetup make_two_peak_setup(double omega_c = 400.0, double omega_n_factor = 2.0,
                                        double rho = 3.0, double beta = 0.3, double zeta = 0.7) {
    std::vector<PidLowpassSpec> channels(2);
    std::vector<NotchSpec> notches{{0, omega_n_factor * omega_c},
                                   {1, rho * omega_n_factor * omega_c}};
    ControllerStructure st(std::move(channels), std::move(notches));
    ControllerParams p;
    p.omega_c = Vector(2);
    p.omega_c << omega_c, rho * omega_c;
    p.beta = Vector::Constant(2, beta);
    p.zeta = Vector::Constant(2, zeta);
    p.scaling = Vector::Ones(st.m());
    return {std::move(st), std::move(p), rho};
}

// FleXstage-like plant: six rigid-body channels, one actively controlled
// flexible channel with a 50 Hz resonance, and two parasitic modes above
// 600 Hz cross-coupling the translational and yaw channels.
inline DecoupledPlant make_flexstage_like(const PlantRecipe& r) {
    const double wq = 2.0 * M_PI * r.flexible_hz;
    const double w1 = 2.0 * M_PI * r.parasitic_hz_1;
    const double w2 = 2.0 * M_PI * r.parasitic_hz_2;

    // masses: translations, rotations, flexible, parasitics
    std::vector<double> m{10.0, 10.0, 10.0, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0};
    std::vector<double> d(9, 0.0), k(9, 0.0);
    d[6] = 2.0 * r.flexible_damping * wq * m[6];
    k[6] = wq * wq * m[6];
    d[7] = 2.0 * r.parasitic_damping * w1 * m[7];
    k[7] = w1 * w1 * m[7];
    d[8] = 2.0 * r.parasitic_damping * w2 * m[8];
    k[8] = w2 * w2 * m[8];

    Matrix p = Matrix::Zero(9, 7);
    Matrix q = Matrix::Zero(7, 9);
    // distinct static gains per channel; exact crossover ties between channels
    // would be structurally unstable in a measured plant
    const double gains[7] = {1.00, 1.06, 0.95, 1.09, 0.92, 1.03, 1.0};
    for (int i = 0; i < 7; ++i) {
        p(i, i) = 1.0;
        q(i, i) = gains[i];
    }
    const double g = r.flex_coupling;
    // parasitic mode participation: translational channels 0..2 and yaw 5
    p.row(7) << 1.0 * g, 0.7 * g, -0.5 * g, 0.0, 0.0, 0.6 * g, 0.0;
    p.row(8) << -0.6 * g, 1.0 * g, 0.8 * g, 0.0, 0.0, -0.7 * g, 0.0;
    q.col(7) << 0.9 * g, -0.6 * g, 0.7 * g, 0.0, 0.0, 0.5 * g, 0.0;
    q.col(8) << 0.5 * g, 0.8 * g, -0.9 * g, 0.0, 0.0, 0.6 * g, 0.0;
    return detail::assemble(m, d, k, p, q);
}

inline DecoupledPlant make_plant(const PlantRecipe& r) {
    switch (r.kind) {
        case PlantKind::TwoAxis: return make_two_axis(r);
        case PlantKind::TwoPeakDummy: return make_two_peak_dummy();
        case PlantKind::FlexstageLike: return make_flexstage_like(r);
    }
    throw std::invalid_argument("make_plant: unknown recipe kind");
}

// Benchmark initial controller for the FleXstage-like plant: channel modal
// masses from the plant, 377 rad/s on rigid channels, 439 rad/s on the
// flexible channel. With `with_notches`, notch filters at the parasitic
// resonances on the coupled channels (translations + yaw).
struct FlexstageSetup {
    ControllerStructure structure;
    ControllerParams params;
};

inline FlexstageSetup make_flexstage_setup(const PlantRecipe& r, bool with_notches,
                                           double omega_c_rigid = 377.0,
                                           double omega_c_flex = 439.0,
                                           double alpha_flex = 2.8) {
    const double w1 = 2.0 * M_PI * r.parasitic_hz_1;
    const double w2 = 2.0 * M_PI * r.parasitic_hz_2;
    const std::vector<double> masses{10.0, 10.0, 10.0, 0.5, 0.5, 0.5, 1.0};

    std::vector<PidLowpassSpec> channels(7);
    for (int i = 0; i < 7; ++i) channels[i].modal_mass = masses[i];
    // the flexible channel is stiffness-dominated below its resonance; a
    // tighter PID ratio keeps its loop gain above unity through the midband
    channels[6].alpha = alpha_flex;

    std::vector<NotchSpec> notches;
    if (with_notches) {
        notches = {{0, w1}, {1, w2}, {2, w2}, {5, w1}};
    }
    ControllerStructure st(std::move(channels), std::move(notches));

    ControllerParams p;
    p.omega_c = Vector::Constant(7, omega_c_rigid);
    p.omega_c(6) = omega_c_flex;
    const int np = st.p();
    p.beta = Vector::Constant(np, 0.5);
    p.zeta = Vector::Constant(np, 0.3);
    p.scaling = Vector::Ones(st.m());
    p.scaling.head(7) = p.omega_c;
    return {std::move(st), std::move(p)};
}

}  // namespace bwopt
