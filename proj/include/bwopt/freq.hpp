#pragma once

// MIMO bandwidth (first unity crossing of the minimum singular value of the
// loop gain), H-infinity norm of the sensitivity with its peak-frequency set,
// singular-value clustering, and closed-loop stability.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "bwopt/controller.hpp"
#include "bwopt/lti.hpp"

namespace bwopt {

struct FrequencyGrid {
    double omega_min = 1e-1;  // rad/s
    double omega_max = 1e5;   // rad/s
    int points = 2000;

    std::vector<double> omegas() const {
        if (!(omega_min > 0.0) || !(omega_max > omega_min) || points < 2)
            throw std::invalid_argument("FrequencyGrid: need 0 < omega_min < omega_max, points >= 2");
        std::vector<double> w(points);
        const double lmin = std::log(omega_min), lmax = std::log(omega_max);
        for (int i = 0; i < points; ++i)
            w[i] = std::exp(lmin + (lmax - lmin) * i / (points - 1));
        return w;
    }
};

struct SingularTriplet {
    double sigma = 0.0;
    ComplexVector u, v;
};

struct BandwidthResult {
    double omega_bw = 0.0;
    std::vector<SingularTriplet> cluster;  // ascending sigma, cluster[0] is the minimum
};

struct SensitivityPeak {
    double omega = 0.0;
    std::vector<SingularTriplet> cluster;  // descending sigma, cluster[0] is the maximum
};

struct SensitivityPeaks {
    double hinf = 0.0;
    std::vector<SensitivityPeak> peaks;
};

// Complex matrix sample of a transfer matrix as a function of frequency.
using TransferEvaluator = std::function<ComplexMatrix(double)>;

namespace detail {

inline int map_thread_count() {
    if (const char* env = std::getenv("BWOPT_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

// Deterministic parallel map: slot i of the result is f(omegas[i]).
inline std::vector<double> map_over_grid(const std::vector<double>& omegas,
                                         const std::function<double(double)>& f) {
    std::vector<double> out(omegas.size());
    const int nthreads = std::min<int>(map_thread_count(), static_cast<int>(omegas.size()));
    if (nthreads <= 1) {
        for (std::size_t i = 0; i < omegas.size(); ++i) out[i] = f(omegas[i]);
        return out;
    }
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (int t = 0; t < nthreads; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < omegas.size(); i += nthreads) out[i] = f(omegas[i]);
        });
    }
    for (auto& th : pool) th.join();
    return out;
}

inline double sigma_min(const ComplexMatrix& m) {
    return m.jacobiSvd().singularValues().minCoeff();
}

inline double sigma_max(const ComplexMatrix& m) {
    return m.jacobiSvd().singularValues().maxCoeff();
}

}  // namespace detail

inline TransferEvaluator make_loop_evaluator(const DecoupledPlant& plant,
                                             const ControllerStructure& st,
                                             const ControllerParams& params) {
    return [&plant, &st, params](double w) {
        return (eval_plant(plant, w).value * eval_controller(st, params, w).value).eval();
    };
}

inline TransferEvaluator make_sensitivity_evaluator(TransferEvaluator loop) {
    return [loop = std::move(loop)](double w) {
        return eval_sensitivity({w, loop(w)}).value;
    };
}

// First downward unity crossing of sigma_min(L), located by grid scan plus
// bisection, with the sigma cluster at omega_bw under tolerance delta_bw.
inline BandwidthResult compute_bandwidth(const TransferEvaluator& loop, const FrequencyGrid& grid,
                                         double delta_bw = 0.02) {
    const std::vector<double> ws = grid.omegas();
    const std::vector<double> sv =
        detail::map_over_grid(ws, [&](double w) { return detail::sigma_min(loop(w)); });

    std::ptrdiff_t bracket = -1;
    for (std::size_t i = 0; i + 1 < ws.size(); ++i) {
        if (sv[i] >= 1.0 && sv[i + 1] < 1.0) {
            bracket = static_cast<std::ptrdiff_t>(i);
            break;
        }
    }
    if (bracket < 0)
        throw std::runtime_error(
            "compute_bandwidth: loop gain never crosses unity on the frequency grid");

    double lo = ws[bracket], hi = ws[bracket + 1];
    while ((hi - lo) > 1e-8 * lo) {
        const double mid = 0.5 * (lo + hi);
        if (detail::sigma_min(loop(mid)) >= 1.0)
            lo = mid;
        else
            hi = mid;
    }
    const double wbw = 0.5 * (lo + hi);

    BandwidthResult out;
    out.omega_bw = wbw;
    const Eigen::JacobiSVD<ComplexMatrix> svd(loop(wbw),
                                              Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sig = svd.singularValues();
    const double smin = sig.minCoeff();
    for (Eigen::Index l = sig.size() - 1; l >= 0; --l) {  // ascending sigma
        if (sig(l) <= (1.0 + delta_bw) * smin)
            out.cluster.push_back({sig(l), svd.matrixU().col(l), svd.matrixV().col(l)});
    }
    return out;
}

namespace detail {

// Golden-section maximization of f on [a, b] to relative abscissa tolerance.
inline std::pair<double, double> golden_max(const std::function<double(double)>& f, double a,
                                            double b, double rel_tol, int max_iter) {
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < max_iter && (b - a) > rel_tol * a; ++it) {
        if (f1 < f2) {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + gr * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - gr * (b - a);
            f1 = f(x1);
        }
    }
    return f1 > f2 ? std::make_pair(x1, f1) : std::make_pair(x2, f2);
}

}  // namespace detail

// Grid scan of sigma_max(S) with golden-section refinement of each local
// maximum; returns the H-infinity norm and all peaks within delta_h of it.
inline SensitivityPeaks compute_sensitivity_peaks(const TransferEvaluator& sens,
                                                  const FrequencyGrid& grid,
                                                  double delta_h = 0.005) {
    const std::vector<double> ws = grid.omegas();
    const std::vector<double> sv =
        detail::map_over_grid(ws, [&](double w) { return detail::sigma_max(sens(w)); });
    auto value = [&](double w) { return detail::sigma_max(sens(w)); };

    std::vector<std::pair<double, double>> candidates;  // (omega, sigma_max)
    const std::size_t n = ws.size();
    for (std::size_t i = 0; i < n; ++i) {
        const bool left_ok = (i == 0) || sv[i] >= sv[i - 1];
        const bool right_ok = (i + 1 == n) || sv[i] >= sv[i + 1];
        if (!(left_ok && right_ok)) continue;
        if (i == 0 || i + 1 == n) {
            candidates.emplace_back(ws[i], sv[i]);
        } else {
            candidates.push_back(detail::golden_max(value, ws[i - 1], ws[i + 1], 1e-8, 60));
        }
    }
    if (candidates.empty())
        throw std::runtime_error("compute_sensitivity_peaks: no peak candidates on the grid");

    double hinf = 0.0;
    for (const auto& c : candidates) hinf = std::max(hinf, c.second);

    SensitivityPeaks out;
    out.hinf = hinf;
    std::sort(candidates.begin(), candidates.end());
    double last_omega = -1.0;
    for (const auto& [w, val] : candidates) {
        if (val < (1.0 - delta_h) * hinf) continue;
        if (last_omega > 0.0 && std::abs(w - last_omega) <= 1e-6 * last_omega) continue;
        last_omega = w;
        SensitivityPeak peak;
        peak.omega = w;
        const Eigen::JacobiSVD<ComplexMatrix> svd(sens(w),
                                                  Eigen::ComputeFullU | Eigen::ComputeFullV);
        const auto& sig = svd.singularValues();
        for (Eigen::Index l = 0; l < sig.size(); ++l) {  // descending sigma
            if (sig(l) >= (1.0 - delta_h) * sig(0))
                peak.cluster.push_back({sig(l), svd.matrixU().col(l), svd.matrixV().col(l)});
        }
        out.peaks.push_back(std::move(peak));
    }
    // tallest first, so the leading entry is the a.e. gradient branch
    std::stable_sort(out.peaks.begin(), out.peaks.end(),
                     [](const SensitivityPeak& a, const SensitivityPeak& b) {
                         return a.cluster.front().sigma > b.cluster.front().sigma;
                     });
    return out;
}

struct StabilityResult {
    bool stable = false;
    double spectral_abscissa = 0.0;
};

namespace detail {

// Parlett-Reinsch diagonal balancing; Eigen's nonsymmetric eigensolver does
// not balance and the closed-loop matrix mixes very different scales.
inline void balance_in_place(Matrix& a) {
    const Eigen::Index n = a.rows();
    const double radix = 2.0;
    bool converged = false;
    int guard = 0;
    while (!converged && guard++ < 100) {
        converged = true;
        for (Eigen::Index i = 0; i < n; ++i) {
            double r = a.row(i).cwiseAbs().sum() - std::abs(a(i, i));
            double c = a.col(i).cwiseAbs().sum() - std::abs(a(i, i));
            if (r <= 0.0 || c <= 0.0) continue;
            double f = 1.0;
            const double s = c + r;
            while (c < r / radix) {
                c *= radix;
                r /= radix;
                f *= radix;
            }
            while (c >= r * radix) {
                c /= radix;
                r *= radix;
                f /= radix;
            }
            if ((c + r) < 0.95 * s && f != 1.0) {
                converged = false;
                a.col(i) *= f;
                a.row(i) /= f;
            }
        }
    }
}

}  // namespace detail

// Closed-loop state matrix of plant + decentralized controller under negative
// feedback; stable iff the spectral abscissa is negative.
inline StabilityResult check_stability(const DecoupledPlant& plant, const ControllerStructure& st,
                                       const ControllerParams& params) {
    const StateSpaceRealization gss = build_state_space(plant);
    const Eigen::Index np = gss.A.rows();
    const int nch = st.n();

    std::vector<StateSpaceRealization> css(nch);
    Eigen::Index nc = 0;
    for (int i = 0; i < nch; ++i) {
        css[i] = realize_channel_cascade(st, params, i);
        nc += css[i].A.rows();
    }

    Matrix acl = Matrix::Zero(np + nc, np + nc);
    acl.topLeftCorner(np, np) = gss.A;
    Eigen::Index off = np;
    for (int i = 0; i < nch; ++i) {
        const Eigen::Index ni = css[i].A.rows();
        acl.block(off, off, ni, ni) = css[i].A;
        // plant input i driven by controller i output
        acl.block(0, off, np, ni) = gss.B.col(i) * css[i].C;
        // controller input is -y_i
        acl.block(off, 0, ni, np) = -css[i].B * gss.C.row(i);
        off += ni;
    }

    detail::balance_in_place(acl);
    const Eigen::EigenSolver<Matrix> eig(acl, false);
    StabilityResult out;
    out.spectral_abscissa = eig.eigenvalues().real().maxCoeff();
    out.stable = out.spectral_abscissa < 0.0;
    return out;
}

}  // namespace bwopt
