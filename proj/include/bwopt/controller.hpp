#pragma once

// Decentralized controller C = diag{C_1..C_n}: PID with second-order low-pass
// per channel, optional notch filters, analytic parameter and frequency
// derivatives, and decision-vector scaling.

#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "bwopt/lti.hpp"

namespace bwopt {

// Fixed per-channel structure data (Table-style PID parameterization: all
// frequencies derived from the single decision variable omega_c).
struct PidLowpassSpec {
    double modal_mass = 1.0;
    double alpha = 3.0;  // PID frequency ratio
    double z_lp = 0.7;   // low-pass damping ratio

    void validate() const {
        if (!(modal_mass > 0.0)) throw std::invalid_argument("PidLowpassSpec: modal_mass must be > 0");
        if (!(alpha > 1.0)) throw std::invalid_argument("PidLowpassSpec: alpha must be > 1");
        if (!(z_lp > 0.0 && z_lp < 1.0)) throw std::invalid_argument("PidLowpassSpec: z_lp must be in (0,1)");
    }
};

// A notch filter with fixed center frequency; depth/width are decision vars.
struct NotchSpec {
    int channel = 0;
    double omega_n = 0.0;  // rad/s
};

// Fixed controller structure: channel specs plus notch placements.
class ControllerStructure {
  public:
    ControllerStructure(std::vector<PidLowpassSpec> channels, std::vector<NotchSpec> notches)
        : channels_(std::move(channels)), notches_(std::move(notches)) {
        for (const auto& c : channels_) c.validate();
        for (const auto& nt : notches_) {
            if (nt.channel < 0 || nt.channel >= n())
                throw std::invalid_argument("NotchSpec: channel index out of range");
            if (!(nt.omega_n > 0.0))
                throw std::invalid_argument("NotchSpec: omega_n must be > 0");
        }
    }

    int n() const { return static_cast<int>(channels_.size()); }
    int p() const { return static_cast<int>(notches_.size()); }
    int m() const { return n() + 2 * p(); }
    const std::vector<PidLowpassSpec>& channels() const { return channels_; }
    const std::vector<NotchSpec>& notches() const { return notches_; }

  private:
    std::vector<PidLowpassSpec> channels_;
    std::vector<NotchSpec> notches_;
};

// Decision vector theta_c = [omega_c; beta; zeta] plus its scaling.
struct ControllerParams {
    Vector omega_c;  // rad/s, length n
    Vector beta;     // notch depths, length p
    Vector zeta;     // notch widths, length p
    Vector scaling;  // positive, length m = n + 2p

    void validate(const ControllerStructure& st) const {
        if (omega_c.size() != st.n() || beta.size() != st.p() || zeta.size() != st.p())
            throw std::invalid_argument("ControllerParams: size mismatch with structure");
        if (scaling.size() != st.m())
            throw std::invalid_argument("ControllerParams: scaling must have length n + 2p");
        if ((omega_c.array() <= 0.0).any())
            throw std::invalid_argument("ControllerParams: omega_c must be > 0");
        if ((beta.array() <= 0.0).any() || (beta.array() > 1.0).any())
            throw std::invalid_argument("ControllerParams: beta must lie in (0, 1]");
        if ((zeta.array() <= 0.0).any())
            throw std::invalid_argument("ControllerParams: zeta must be > 0");
        if ((scaling.array() <= 0.0).any())
            throw std::invalid_argument("ControllerParams: scaling must be positive");
    }

    Vector to_vector() const {
        Vector v(omega_c.size() + beta.size() + zeta.size());
        v << omega_c, beta, zeta;
        return v;
    }

    static ControllerParams from_vector(const ControllerStructure& st, const Vector& v,
                                        Vector scaling) {
        if (v.size() != st.m())
            throw std::invalid_argument("ControllerParams::from_vector: wrong length");
        ControllerParams p;
        p.omega_c = v.head(st.n());
        p.beta = v.segment(st.n(), st.p());
        p.zeta = v.tail(st.p());
        p.scaling = std::move(scaling);
        return p;
    }
};

// physical -> internal normalized decision variables
inline Vector scale_params(const Vector& physical, const Vector& scaling) {
    return physical.cwiseQuotient(scaling);
}

// internal normalized -> physical decision variables
inline Vector unscale_params(const Vector& internal, const Vector& scaling) {
    return internal.cwiseProduct(scaling);
}

namespace detail {

struct PidTerms {
    Complex value;       // channel PID+LP value at s
    Complex dlog_domega_c;  // d log C / d omega_c
    Complex dlog_ds;        // d log C / d s
};

inline PidTerms pid_lp_eval(const PidLowpassSpec& spec, double omega_c, Complex s) {
    const double a = spec.alpha;
    const double kp = spec.modal_mass * omega_c * omega_c / a;
    const double w_i = omega_c / (a * a);
    const double w_d = omega_c / a;
    const double w_lp = a * omega_c;

    const Complex t1 = (s + w_i) / s;
    const Complex t2 = s / w_d + 1.0;
    const Complex den_lp = s * s / (w_lp * w_lp) + 2.0 * spec.z_lp * s / w_lp + 1.0;

    PidTerms out;
    out.value = kp * t1 * t2 / den_lp;

    const Complex dt1 = (1.0 / (a * a)) / s;
    const Complex dt2 = -s * a / (omega_c * omega_c);
    const Complex dden = -a * (2.0 * s * s / (w_lp * w_lp * w_lp) +
                               2.0 * spec.z_lp * s / (w_lp * w_lp));
    out.dlog_domega_c = 2.0 / omega_c + dt1 / t1 + dt2 / t2 - dden / den_lp;

    const Complex dden_ds = 2.0 * s / (w_lp * w_lp) + 2.0 * spec.z_lp / w_lp;
    out.dlog_ds = (1.0 / (s + w_i) - 1.0 / s) + (1.0 / w_d) / t2 - dden_ds / den_lp;
    return out;
}

struct NotchTerms {
    Complex value;
    Complex dvalue_dbeta;
    Complex dvalue_dzeta;
    Complex dlog_ds;
};

inline NotchTerms notch_eval(double beta, double zeta, double omega_n, Complex s) {
    const Complex num = s * s + 2.0 * beta * zeta * omega_n * s + omega_n * omega_n;
    const Complex den = s * s + 2.0 * zeta * omega_n * s + omega_n * omega_n;

    NotchTerms out;
    out.value = num / den;
    out.dvalue_dbeta = 2.0 * zeta * omega_n * s / den;
    out.dvalue_dzeta = 2.0 * omega_n * s * (beta * den - num) / (den * den);
    out.dlog_ds = (2.0 * s + 2.0 * beta * zeta * omega_n) / num -
                  (2.0 * s + 2.0 * zeta * omega_n) / den;
    return out;
}

}  // namespace detail

// Diagonal C(jw, theta_c).
inline FrequencyResponse eval_controller(const ControllerStructure& st,
                                         const ControllerParams& params, double omega) {
    if (omega == 0.0)
        throw std::invalid_argument("eval_controller: omega = 0 hits the integrator pole");
    const Complex s(0.0, omega);
    ComplexMatrix c = ComplexMatrix::Zero(st.n(), st.n());
    for (int i = 0; i < st.n(); ++i)
        c(i, i) = detail::pid_lp_eval(st.channels()[i], params.omega_c(i), s).value;
    for (int j = 0; j < st.p(); ++j) {
        const auto& nt = st.notches()[j];
        c(nt.channel, nt.channel) *=
            detail::notch_eval(params.beta(j), params.zeta(j), nt.omega_n, s).value;
    }
    return {omega, std::move(c)};
}

// dC(jw)/d theta_ci for one component of theta_c = [omega_c; beta; zeta].
inline FrequencyResponse controller_param_derivative(const ControllerStructure& st,
                                                     const ControllerParams& params,
                                                     double omega, int param_index) {
    if (param_index < 0 || param_index >= st.m())
        throw std::invalid_argument("controller_param_derivative: param_index out of range");
    const Complex s(0.0, omega);
    const int n = st.n();
    const int p = st.p();
    ComplexMatrix d = ComplexMatrix::Zero(n, n);

    auto channel_value = [&](int i) {
        Complex v = detail::pid_lp_eval(st.channels()[i], params.omega_c(i), s).value;
        for (int j = 0; j < p; ++j)
            if (st.notches()[j].channel == i)
                v *= detail::notch_eval(params.beta(j), params.zeta(j), st.notches()[j].omega_n, s)
                         .value;
        return v;
    };

    if (param_index < n) {
        const int i = param_index;
        const auto terms = detail::pid_lp_eval(st.channels()[i], params.omega_c(i), s);
        d(i, i) = channel_value(i) * terms.dlog_domega_c;
    } else {
        const bool is_beta = param_index < n + p;
        const int j = is_beta ? param_index - n : param_index - n - p;
        const auto& nt = st.notches()[j];
        const auto terms = detail::notch_eval(params.beta(j), params.zeta(j), nt.omega_n, s);
        const Complex rest = channel_value(nt.channel) / terms.value;
        d(nt.channel, nt.channel) = rest * (is_beta ? terms.dvalue_dbeta : terms.dvalue_dzeta);
    }
    return {omega, std::move(d)};
}

// dC(jw)/d omega = j dC/ds, analytic.
inline ComplexMatrix controller_omega_derivative(const ControllerStructure& st,
                                                 const ControllerParams& params, double omega) {
    const Complex s(0.0, omega);
    ComplexMatrix d = ComplexMatrix::Zero(st.n(), st.n());
    for (int i = 0; i < st.n(); ++i) {
        const auto terms = detail::pid_lp_eval(st.channels()[i], params.omega_c(i), s);
        Complex v = terms.value;
        Complex dlog = terms.dlog_ds;
        for (int j = 0; j < st.p(); ++j) {
            if (st.notches()[j].channel != i) continue;
            const auto nterms = detail::notch_eval(params.beta(j), params.zeta(j),
                                                   st.notches()[j].omega_n, s);
            v *= nterms.value;
            dlog += nterms.dlog_ds;
        }
        d(i, i) = Complex(0.0, 1.0) * v * dlog;
    }
    return d;
}

// Real transfer-function coefficients of one channel, ascending powers of s.
// num/den of PID+LP times the channel's notches; strictly proper.
struct ChannelTransferFunction {
    Vector num;
    Vector den;
};

namespace detail {

inline Vector poly_mul(const Vector& a, const Vector& b) {
    Vector c = Vector::Zero(a.size() + b.size() - 1);
    for (Eigen::Index i = 0; i < a.size(); ++i)
        for (Eigen::Index j = 0; j < b.size(); ++j) c(i + j) += a(i) * b(j);
    return c;
}

}  // namespace detail

inline ChannelTransferFunction channel_transfer_function(const ControllerStructure& st,
                                                         const ControllerParams& params,
                                                         int channel) {
    const auto& spec = st.channels()[channel];
    const double wc = params.omega_c(channel);
    const double a = spec.alpha;
    const double kp = spec.modal_mass * wc * wc / a;
    const double w_i = wc / (a * a);
    const double w_d = wc / a;
    const double w_lp = a * wc;

    Vector num(2);
    num << w_i, 1.0;  // s + w_i
    Vector t2(2);
    t2 << 1.0, 1.0 / w_d;  // s/w_d + 1
    num = detail::poly_mul(num, t2) * kp;

    Vector den(4);
    den << 0.0, 1.0, 2.0 * spec.z_lp / w_lp, 1.0 / (w_lp * w_lp);  // s * lowpass denom

    for (int j = 0; j < st.p(); ++j) {
        const auto& nt = st.notches()[j];
        if (nt.channel != channel) continue;
        const double wn = nt.omega_n;
        Vector nn(3), nd(3);
        nn << wn * wn, 2.0 * params.beta(j) * params.zeta(j) * wn, 1.0;
        nd << wn * wn, 2.0 * params.zeta(j) * wn, 1.0;
        num = detail::poly_mul(num, nn);
        den = detail::poly_mul(den, nd);
    }
    return {num, den};
}

// State-space feedthrough variant for cascade blocks.
struct StateSpaceWithFeedthrough {
    Matrix A, B, C;
    double D = 0.0;
};

namespace detail {

// series connection u -> first -> second -> y
inline StateSpaceWithFeedthrough cascade(const StateSpaceWithFeedthrough& first,
                                         const StateSpaceWithFeedthrough& second) {
    const Eigen::Index n1 = first.A.rows(), n2 = second.A.rows();
    StateSpaceWithFeedthrough ss;
    ss.A = Matrix::Zero(n1 + n2, n1 + n2);
    ss.A.topLeftCorner(n1, n1) = first.A;
    ss.A.bottomRightCorner(n2, n2) = second.A;
    ss.A.bottomLeftCorner(n2, n1) = second.B * first.C;
    ss.B = Matrix::Zero(n1 + n2, 1);
    ss.B.topRows(n1) = first.B * 1.0;
    ss.B.bottomRows(n2) = second.B * first.D;
    ss.C = Matrix::Zero(1, n1 + n2);
    ss.C.leftCols(n1) = second.D * first.C;
    ss.C.rightCols(n2) = second.C;
    ss.D = first.D * second.D;
    return ss;
}

}  // namespace detail

// Channel realization as a cascade of the 3rd-order PID+LP block and one
// biquad per notch; keeps coefficient ranges per block small so the
// closed-loop eigenproblem stays well conditioned.
inline StateSpaceRealization realize_channel_cascade(const ControllerStructure& st,
                                                     const ControllerParams& params, int channel) {
    const auto& spec = st.channels()[channel];
    const double wc = params.omega_c(channel);
    const double a = spec.alpha;
    const double kp = spec.modal_mass * wc * wc / a;
    const double w_i = wc / (a * a);
    const double w_d = wc / a;
    const double w_lp = a * wc;

    // kp (s + w_i)(s/w_d + 1) / (s (s^2/w_lp^2 + 2 z s/w_lp + 1)), monic form
    StateSpaceWithFeedthrough pid;
    pid.A = Matrix::Zero(3, 3);
    pid.A(0, 1) = 1.0;
    pid.A(1, 2) = 1.0;
    pid.A(2, 1) = -w_lp * w_lp;
    pid.A(2, 2) = -2.0 * spec.z_lp * w_lp;
    pid.B = Matrix::Zero(3, 1);
    pid.B(2, 0) = 1.0;
    const double gain = kp * w_lp * w_lp / w_d;
    pid.C = Matrix::Zero(1, 3);
    pid.C(0, 0) = gain * w_i * w_d;
    pid.C(0, 1) = gain * (w_i + w_d);
    pid.C(0, 2) = gain;
    pid.D = 0.0;

    StateSpaceWithFeedthrough acc = pid;
    for (int j = 0; j < st.p(); ++j) {
        const auto& nt = st.notches()[j];
        if (nt.channel != channel) continue;
        const double wn = nt.omega_n;
        const double zt = params.zeta(j);
        StateSpaceWithFeedthrough biquad;
        biquad.A = Matrix::Zero(2, 2);
        biquad.A(0, 1) = 1.0;
        biquad.A(1, 0) = -wn * wn;
        biquad.A(1, 1) = -2.0 * zt * wn;
        biquad.B = Matrix::Zero(2, 1);
        biquad.B(1, 0) = 1.0;
        biquad.C = Matrix::Zero(1, 2);
        biquad.C(0, 1) = 2.0 * (params.beta(j) - 1.0) * zt * wn;
        biquad.D = 1.0;
        acc = detail::cascade(acc, biquad);
    }
    return {acc.A, acc.B, acc.C};
}

// Controllable-canonical realization of one strictly proper channel.
inline StateSpaceRealization realize_channel(const ChannelTransferFunction& tf) {
    const Eigen::Index nd = tf.den.size() - 1;  // state dimension
    const double lead = tf.den(nd);
    Vector den = tf.den / lead;
    Vector num = Vector::Zero(nd);
    num.head(tf.num.size()) = tf.num / lead;

    StateSpaceRealization ss;
    ss.A = Matrix::Zero(nd, nd);
    ss.A.topRightCorner(nd - 1, nd - 1) = Matrix::Identity(nd - 1, nd - 1);
    ss.A.row(nd - 1) = -den.head(nd).transpose();
    ss.B = Matrix::Zero(nd, 1);
    ss.B(nd - 1, 0) = 1.0;
    ss.C = num.transpose();
    return ss;
}

}  // namespace bwopt
