#pragma once

// Modal second-order plant models and frequency-response evaluation of the
// plant and derived closed-loop maps (loop gain, sensitivity).

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace bwopt {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

// A complex matrix sample of a transfer matrix at one frequency.
struct FrequencyResponse {
    double omega = 0.0;  // rad/s
    ComplexMatrix value;
};

// Second-order modal model  M x" + D x' + K x = P u,  y = Q x
// with diagonal M, D, K stored as vectors.
class ModalPlant {
  public:
    ModalPlant(Vector mass, Vector damping, Vector stiffness, Matrix input_map,
               Matrix measurement_map)
        : mass_(std::move(mass)),
          damping_(std::move(damping)),
          stiffness_(std::move(stiffness)),
          P_(std::move(input_map)),
          Q_(std::move(measurement_map)) {
        const auto n = mass_.size();
        if (damping_.size() != n || stiffness_.size() != n)
            throw std::invalid_argument("ModalPlant: M, D, K diagonals must have equal length");
        if ((mass_.array() <= 0.0).any())
            throw std::invalid_argument("ModalPlant: modal masses must be strictly positive");
        if ((damping_.array() < 0.0).any() || (stiffness_.array() < 0.0).any())
            throw std::invalid_argument("ModalPlant: damping and stiffness must be nonnegative");
        if (P_.rows() != n)
            throw std::invalid_argument("ModalPlant: P must have one row per modal state");
        if (Q_.cols() != n)
            throw std::invalid_argument("ModalPlant: Q must have one column per modal state");
    }

    Eigen::Index n_states() const { return mass_.size(); }
    Eigen::Index n_inputs() const { return P_.cols(); }
    Eigen::Index n_outputs() const { return Q_.rows(); }

    const Vector& mass() const { return mass_; }
    const Vector& damping() const { return damping_; }
    const Vector& stiffness() const { return stiffness_; }
    const Matrix& input_map() const { return P_; }
    const Matrix& measurement_map() const { return Q_; }

  private:
    Vector mass_, damping_, stiffness_;
    Matrix P_, Q_;
};

// Modal plant with input/output decoupling transforms applied:
//   P_hat = P * T_u^-1,   Q_hat = T_y * Q.
class DecoupledPlant {
  public:
    DecoupledPlant(ModalPlant base, Matrix t_u, Matrix t_y)
        : base_(std::move(base)), T_u_(std::move(t_u)), T_y_(std::move(t_y)) {
        if (T_u_.rows() != T_u_.cols() || T_u_.rows() != base_.n_inputs())
            throw std::invalid_argument("DecoupledPlant: T_u must be square n_inputs x n_inputs");
        Eigen::FullPivLU<Matrix> lu(T_u_);
        if (!lu.isInvertible())
            throw std::invalid_argument("DecoupledPlant: T_u is singular");
        if (T_y_.cols() != base_.n_outputs())
            throw std::invalid_argument("DecoupledPlant: T_y column count must match plant outputs");
        P_hat_ = base_.input_map() * lu.inverse();
        Q_hat_ = T_y_ * base_.measurement_map();
        if (P_hat_.cols() != Q_hat_.rows())
            throw std::invalid_argument("DecoupledPlant: decoupled channel counts disagree");
    }

    Eigen::Index n_channels() const { return Q_hat_.rows(); }
    const ModalPlant& base() const { return base_; }
    const Matrix& T_u() const { return T_u_; }
    const Matrix& T_y() const { return T_y_; }
    const Matrix& P_hat() const { return P_hat_; }
    const Matrix& Q_hat() const { return Q_hat_; }

  private:
    ModalPlant base_;
    Matrix T_u_, T_y_;
    Matrix P_hat_, Q_hat_;
};

// State-space realization x' = A x + B u, y = C x.
struct StateSpaceRealization {
    Matrix A, B, C;
};

namespace detail {

// Diagonal modal resolvent entries 1/(-w^2 m + j w d + k); throws on an
// exactly singular (undamped resonance) entry.
inline ComplexVector modal_resolvent(const ModalPlant& p, double omega) {
    ComplexVector phi(p.n_states());
    for (Eigen::Index i = 0; i < p.n_states(); ++i) {
        const Complex den(-omega * omega * p.mass()(i) + p.stiffness()(i),
                          omega * p.damping()(i));
        if (std::abs(den) == 0.0)
            throw std::domain_error("eval_plant: undamped resonance at omega = " +
                                    std::to_string(omega) + " rad/s (mode " +
                                    std::to_string(i) + ")");
        phi(i) = 1.0 / den;
    }
    return phi;
}

// Signed-frequency evaluation; test entry point for conjugate symmetry checks.
inline ComplexMatrix eval_plant_signed(const DecoupledPlant& plant, double omega) {
    const ComplexVector phi = modal_resolvent(plant.base(), omega);
    return plant.Q_hat() * phi.asDiagonal() * plant.P_hat().cast<Complex>();
}

}  // namespace detail

// G(jw) = Q_hat (-w^2 M + j w D + K)^-1 P_hat.
inline FrequencyResponse eval_plant(const DecoupledPlant& plant, double omega) {
    if (!(omega > 0.0)) throw std::invalid_argument("eval_plant: omega must be positive");
    return {omega, detail::eval_plant_signed(plant, omega)};
}

// dG/dw at s = jw, from the derivative of the modal resolvent.
inline ComplexMatrix plant_omega_derivative(const DecoupledPlant& plant, double omega) {
    const ModalPlant& p = plant.base();
    ComplexVector dphi(p.n_states());
    for (Eigen::Index i = 0; i < p.n_states(); ++i) {
        const Complex den(-omega * omega * p.mass()(i) + p.stiffness()(i),
                          omega * p.damping()(i));
        const Complex dden(-2.0 * omega * p.mass()(i), p.damping()(i));
        dphi(i) = -dden / (den * den);
    }
    return plant.Q_hat() * dphi.asDiagonal() * plant.P_hat().cast<Complex>();
}

// Block second-order realization:
//   A = [0 I; -M^-1 K  -M^-1 D],  B = [0; M^-1 P_hat],  C = [Q_hat 0].
// When `velocity_block_uses_stiffness` is set the printed form with the
// stiffness block repeated in the velocity column is built instead; that
// variant exists for comparison in tests only.
inline StateSpaceRealization build_state_space(const DecoupledPlant& plant,
                                               bool velocity_block_uses_stiffness = false) {
    const ModalPlant& p = plant.base();
    const Eigen::Index n = p.n_states();
    const Vector minv = p.mass().cwiseInverse();

    StateSpaceRealization ss;
    ss.A = Matrix::Zero(2 * n, 2 * n);
    ss.A.topRightCorner(n, n) = Matrix::Identity(n, n);
    ss.A.bottomLeftCorner(n, n) = (-minv.cwiseProduct(p.stiffness())).asDiagonal();
    const Vector& vel = velocity_block_uses_stiffness ? p.stiffness() : p.damping();
    ss.A.bottomRightCorner(n, n) = (-minv.cwiseProduct(vel)).asDiagonal();

    ss.B = Matrix::Zero(2 * n, plant.n_channels());
    ss.B.bottomRows(n) = minv.asDiagonal() * plant.P_hat();

    ss.C = Matrix::Zero(plant.n_channels(), 2 * n);
    ss.C.leftCols(n) = plant.Q_hat();
    return ss;
}

// L(jw) = G(jw) C(jw)
inline FrequencyResponse eval_loop(const FrequencyResponse& plant_eval,
                                   const FrequencyResponse& controller_eval) {
    if (plant_eval.value.cols() != controller_eval.value.rows())
        throw std::invalid_argument("eval_loop: dimension mismatch between G and C");
    return {plant_eval.omega, plant_eval.value * controller_eval.value};
}

// S(jw) = (I + L(jw))^-1
inline FrequencyResponse eval_sensitivity(const FrequencyResponse& loop_eval) {
    const Eigen::Index n = loop_eval.value.rows();
    if (n != loop_eval.value.cols())
        throw std::invalid_argument("eval_sensitivity: loop gain must be square");
    ComplexMatrix m = ComplexMatrix::Identity(n, n) + loop_eval.value;
    Eigen::FullPivLU<ComplexMatrix> lu(m);
    if (!lu.isInvertible())
        throw std::runtime_error("eval_sensitivity: I + L singular at omega = " +
                                std::to_string(loop_eval.omega) +
                                " rad/s (closed-loop pole on the imaginary axis)");
    return {loop_eval.omega, lu.inverse()};
}

}  // namespace bwopt
