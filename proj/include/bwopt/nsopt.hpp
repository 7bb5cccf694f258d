#pragma once

// BFGS-SQP nonsmooth constrained solver: penalty steering, inexact
// Armijo/weak-Wolfe line search, and epsilon-stationarity termination via a
// min-norm QP over cached penalty-function gradients. Supports raw-subgradient
// and QP-steepest descent direction modes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "bwopt/freq.hpp"
#include "bwopt/subgrad.hpp"

namespace bwopt {

enum class DirectionMode { RawSubgradient, QpSteepest };

enum class TerminationStatus { Converged, NotConvergedBudget, LineSearchFailed, InitialUnstable };

inline std::string to_string(TerminationStatus s) {
    switch (s) {
        case TerminationStatus::Converged: return "CONVERGED";
        case TerminationStatus::NotConvergedBudget: return "NOT_CONVERGED_BUDGET";
        case TerminationStatus::LineSearchFailed: return "LINESEARCH_FAILED";
        case TerminationStatus::InitialUnstable: return "INITIAL_UNSTABLE";
    }
    return "UNKNOWN";
}

struct SolverConfig {
    double s_max = 2.0;        // robustness bound on ||S||_inf
    double c_v = 0.7;          // steering: required fraction of violation reduction
    double c_mu = 0.3;         // steering: penalty shrink factor
    double mu0 = 1.0;          // initial penalty parameter on the objective
    double delta_bw = 0.02;    // sigma clustering tolerance at the crossover
    double delta_h = 0.005;    // sensitivity peak clustering tolerance
    double stationarity_tol = 1e-6;
    double feasibility_tol = 1e-6;
    double steering_tol = 1e-3;  // slack on the steering test; predicted
                                 // crossings this small are polished by the
                                 // line search rather than by cutting mu
    int max_iter = 500;
    int max_fun_evals = 5000;
    DirectionMode direction_mode = DirectionMode::QpSteepest;
    double cache_radius = 1e-4;  // trust radius of the gradient cache, scaled space
    int cache_size = 0;          // 0 selects min(2m, 40)
    double wolfe_c1 = 1e-4;
    double wolfe_c2 = 0.5;

    void validate() const {
        if (!(s_max > 1.0)) throw std::invalid_argument("SolverConfig: S_max must exceed 1");
        if (!(c_v > 0.0 && c_v < 1.0) || !(c_mu > 0.0 && c_mu < 1.0))
            throw std::invalid_argument("SolverConfig: steering parameters must lie in (0,1)");
        if (!(mu0 > 0.0)) throw std::invalid_argument("SolverConfig: mu0 must be positive");
    }
};

// One evaluation of a nonsmooth constrained problem. Constraints are feasible
// when <= 0. An invalid evaluation is the instability sentinel: the line
// search treats it as +infinity.
struct ProblemEvaluation {
    bool valid = true;
    double f = 0.0;
    Matrix f_subgradients;                       // m x k, k >= 1
    Vector constraints;                          // t values
    std::vector<Matrix> constraint_subgradients; // t sets, each m x k_j
};

class NonsmoothProblem {
  public:
    virtual ~NonsmoothProblem() = default;
    virtual int dimension() const = 0;
    virtual ProblemEvaluation evaluate(const Vector& theta) = 0;
    // Simple bounds are handled by projection rather than through the penalty:
    // a bound multiplier has no natural scale in the penalty function and
    // poisons the steering logic. Defaults are the unconstrained no-ops.
    virtual void project(Vector& /*theta*/) const {}
    // zero the components of d that push out of the box at active bounds
    virtual void project_tangent(const Vector& /*theta*/, Vector& /*d*/) const {}
};

struct IterationRecord {
    int iter = 0;
    double f = 0.0;
    double violation = 0.0;
    double mu = 0.0;
    double step = 0.0;
    double direction_norm = 0.0;
};

struct SolveResult {
    TerminationStatus status = TerminationStatus::NotConvergedBudget;
    Vector theta;
    double f = 0.0;
    double violation = 0.0;
    Vector constraints;
    int iterations = 0;
    int fun_evals = 0;
    double stationarity_certificate = std::numeric_limits<double>::infinity();
    std::vector<IterationRecord> history;
};

class BfgsSqpSolver {
  public:
    BfgsSqpSolver(NonsmoothProblem& problem, SolverConfig config)
        : problem_(problem), cfg_(std::move(config)) {
        cfg_.validate();
    }

    SolveResult solve(const Vector& theta0) {
        const int m = problem_.dimension();
        const int cache_cap = cfg_.cache_size > 0 ? cfg_.cache_size : std::min(2 * m, 40);

        SolveResult res;
        res.theta = theta0;
        mu_ = cfg_.mu0;
        W_ = Matrix::Identity(m, m);
        cache_.clear();

        Point cur = make_point(theta0, res);
        if (!cur.valid) {
            res.status = TerminationStatus::InitialUnstable;
            return res;
        }
        // prescale the penalty weight by the initial objective gradient so the
        // first quasi-Newton directions are O(1) in scaled space; without this
        // a steep objective (|grad f| in the hundreds) buys large constraint
        // violations before steering can react
        mu_ = cfg_.mu0 / (1.0 + cur.grad_f.norm());
        push_cache(cur, cache_cap);
        record_best(res, cur);

        bool reset_once = false;
        for (int iter = 1; iter <= cfg_.max_iter; ++iter) {
            Vector d = steering_direction(cur);
            Vector gphi = mu_ * cur.grad_f + cur.grad_v;
            double dphi0 = gphi.dot(d);

            if (!(dphi0 < 0.0)) {
                if (!reset_once) {
                    reset_once = true;
                    W_ = Matrix::Identity(m, m);
                    d = steering_direction(cur);
                    gphi = mu_ * cur.grad_f + cur.grad_v;
                    dphi0 = gphi.dot(d);
                }
                if (!(dphi0 < 0.0)) {
                    if (stationarity_ok(cur, res)) {
                        finish(res, cur, iter - 1);
                        res.status = TerminationStatus::Converged;
                        return res;
                    }
                    // no descent direction yet not stationary: the penalty
                    // weight is too heavy for the local kink geometry;
                    // contract it and retry
                    if (mu_ > 1e-16 && res.fun_evals < cfg_.max_fun_evals) {
                        if (std::getenv("BWOPT_DEBUG_STEERING"))
                            std::fprintf(stderr, "mu cut (no-descent) iter=%d mu=%.3e\n", iter,
                                         mu_ * cfg_.c_mu);
                        mu_ *= cfg_.c_mu;
                        res.history.push_back({iter, cur.f, cur.v, mu_, 0.0, d.norm()});
                        res.iterations = iter;
                        continue;
                    }
                    finish(res, cur, iter - 1);
                    res.status = TerminationStatus::LineSearchFailed;
                    return res;
                }
            }

            double alpha = 0.0;
            Point next;
            bool ls_ok = line_search(cur, d, dphi0, alpha, next, res);
            if (ls_ok && step_stalled(cur, next)) ls_ok = false;
            if (!ls_ok && !reset_once) {
                reset_once = true;
                W_ = Matrix::Identity(m, m);
                d = steering_direction(cur);
                gphi = mu_ * cur.grad_f + cur.grad_v;
                dphi0 = gphi.dot(d);
                if (dphi0 < 0.0) ls_ok = line_search(cur, d, dphi0, alpha, next, res);
                if (ls_ok && step_stalled(cur, next)) ls_ok = false;
            }
            double dnorm = d.norm();
            if (!ls_ok) {
                if (stationarity_ok(cur, res)) {
                    finish(res, cur, iter);
                    res.status = TerminationStatus::Converged;
                    return res;
                }
                ls_ok = fallback_search(cur, alpha, dnorm, next, res);
                if (!ls_ok) {
                    // not stationary yet every search direction stalls: the
                    // penalty weight is too heavy for the local kink geometry;
                    // contract it and retry (keeping W: the accumulated
                    // curvature of the violation term is what lets the next
                    // direction bend along the constraint surface)
                    if (mu_ > 1e-16 && res.fun_evals < cfg_.max_fun_evals) {
                        if (std::getenv("BWOPT_DEBUG_STEERING"))
                            std::fprintf(stderr, "mu cut (escape) iter=%d mu=%.3e\n", iter, mu_ * cfg_.c_mu);
                        mu_ *= cfg_.c_mu;
                        res.history.push_back({iter, cur.f, cur.v, mu_, 0.0, dnorm});
                        res.iterations = iter;
                        continue;
                    }
                    finish(res, cur, iter);
                    res.status = stationarity_ok(cur, res) ? TerminationStatus::Converged
                                                           : TerminationStatus::LineSearchFailed;
                    return res;
                }
            }
            reset_once = false;

            // BFGS update on the penalty-function gradient
            const Vector s = next.theta - cur.theta;
            const Vector y = (mu_ * next.grad_f + next.grad_v) - gphi;
            const double sy = s.dot(y);
            if (sy > 1e-10 * s.norm() * y.norm()) {
                const double rho = 1.0 / sy;
                const Matrix i = Matrix::Identity(m, m);
                W_ = (i - rho * s * y.transpose()) * W_ * (i - rho * y * s.transpose()) +
                     rho * s * s.transpose();
                W_ = 0.5 * (W_ + W_.transpose());
                const Eigen::SelfAdjointEigenSolver<Matrix> eig(W_, Eigen::EigenvaluesOnly);
                const double lo_eig = eig.eigenvalues().minCoeff();
                const double hi_eig = eig.eigenvalues().maxCoeff();
                // indefinite or so ill conditioned that a'Wa can lose its sign
                if (lo_eig < 1e-10 * std::max(1.0, hi_eig)) W_ = Matrix::Identity(m, m);
            }

            cur = std::move(next);
            push_cache(cur, cache_cap);
            record_best(res, cur);

            res.history.push_back({iter, cur.f, cur.v, mu_, alpha, dnorm});
            res.iterations = iter;

            if (stationarity_ok(cur, res)) {
                finish(res, cur, iter);
                res.status = TerminationStatus::Converged;
                return res;
            }
            if (res.fun_evals >= cfg_.max_fun_evals) break;
        }

        finish(res, cur, res.iterations);
        res.status = TerminationStatus::NotConvergedBudget;
        return res;
    }

  private:
    struct Point {
        bool valid = false;
        Vector theta;
        double f = 0.0;
        Vector grad_f;         // direction-mode representative of the f set
        Vector constraints;    // raw values
        Matrix con_grads;      // m x t, representatives per constraint
        double v = 0.0;        // total violation sum(max(c,0))
        Vector grad_v;         // sum of gradients of violated constraints
        Matrix f_set;                 // full objective subdifferential set
        std::vector<Matrix> con_sets; // full constraint subdifferential sets
    };

    Vector pick(const Matrix& set) const {
        if (cfg_.direction_mode == DirectionMode::RawSubgradient || set.cols() == 1)
            return set.col(0);
        SubdifferentialSet s;
        for (Eigen::Index j = 0; j < set.cols(); ++j) s.gradients.push_back(set.col(j));
        return min_norm_direction(s).direction;
    }

    Point make_point(Vector theta, SolveResult& res) {
        problem_.project(theta);
        ++res.fun_evals;
        const ProblemEvaluation ev = problem_.evaluate(theta);
        Point p;
        p.theta = std::move(theta);
        p.valid = ev.valid;
        if (!ev.valid) return p;
        p.f = ev.f;
        p.grad_f = pick(ev.f_subgradients);
        p.f_set = ev.f_subgradients;
        p.con_sets = ev.constraint_subgradients;
        p.constraints = ev.constraints;
        const int t = static_cast<int>(ev.constraints.size());
        p.con_grads = Matrix::Zero(problem_.dimension(), t);
        p.grad_v = Vector::Zero(problem_.dimension());
        p.v = 0.0;
        for (int j = 0; j < t; ++j) {
            p.con_grads.col(j) = pick(ev.constraint_subgradients[j]);
            if (ev.constraints(j) > 0.0) {
                p.v += ev.constraints(j);
                p.grad_v += p.con_grads.col(j);
            }
        }
        return p;
    }

    // Dual coordinate ascent for the steering QP
    //   min_d  mu g'd + 1/2 d' W^-1 d + sum_j max(c_j + a_j'd, 0)
    // with d = -W (mu g + A lambda), lambda in [0,1]^t.
    Vector qp_direction(const Point& p, double mu,
                        const std::vector<char>* face_mask = nullptr) const {
        const int m = static_cast<int>(p.theta.size());
        // restrict the subproblem to the face of active simple bounds: zeroing
        // the masked rows and columns of W keeps the dual consistent with a
        // direction that cannot leave the face
        Matrix Wf = W_;
        Vector g = p.grad_f;
        Matrix A = p.con_grads;
        if (face_mask) {
            for (int i = 0; i < m; ++i) {
                if (!(*face_mask)[static_cast<size_t>(i)]) continue;
                Wf.row(i).setZero();
                Wf.col(i).setZero();
                g(i) = 0.0;
                A.row(i).setZero();
            }
        }
        const int t = static_cast<int>(p.constraints.size());
        if (t == 0) return (-mu * (Wf * g)).eval();
        Vector lambda = Vector::Zero(t);
        std::vector<Vector> wa(t);
        Vector waa(t);
        for (int j = 0; j < t; ++j) {
            wa[j] = Wf * A.col(j);
            waa(j) = A.col(j).dot(wa[j]);
        }
        const Vector wg = Wf * g;
        for (int sweep = 0; sweep < 200; ++sweep) {
            double change = 0.0;
            for (int j = 0; j < t; ++j) {
                if (waa(j) <= 0.0) continue;
                // gradient of the dual in lambda_j with own contribution removed
                double other = A.col(j).dot(mu * wg);
                for (int i = 0; i < t; ++i)
                    if (i != j) other += lambda(i) * A.col(j).dot(wa[i]);
                double lj = (p.constraints(j) - other) / waa(j);
                lj = std::min(1.0, std::max(0.0, lj));
                change = std::max(change, std::abs(lj - lambda(j)));
                lambda(j) = lj;
            }
            if (change < 1e-14) break;
        }
        Vector r = mu * g;
        for (int j = 0; j < t; ++j) r += lambda(j) * A.col(j);
        return (-(Wf * r)).eval();
    }

    // Solve the steering QP on the face of active simple bounds.  A direction
    // clipped after the fact would break the QP's complementarity (the clipped
    // step can point back into a violated constraint the dual thought it was
    // reducing), so coordinates removed by the tangent projection are folded
    // back into the subproblem until the solution lies in the face.
    Vector projected_qp_direction(const Point& p, double mu) const {
        std::vector<char> mask(static_cast<size_t>(p.theta.size()), 0);
        for (int pass = 0; pass < 3; ++pass) {
            Vector d = qp_direction(p, mu, &mask);
            Vector dp = d;
            problem_.project_tangent(p.theta, dp);
            bool changed = false;
            for (Eigen::Index i = 0; i < d.size(); ++i) {
                if (dp(i) != d(i) && !mask[static_cast<size_t>(i)]) {
                    mask[static_cast<size_t>(i)] = 1;
                    changed = true;
                }
            }
            if (!changed) return dp;
        }
        Vector d = qp_direction(p, mu, &mask);
        problem_.project_tangent(p.theta, d);
        return d;
    }

    // Full Clarke subdifferential of the penalty function at p: mu times the
    // objective hull, Minkowski-summed with the hull of every violated
    // constraint; near-active feasible constraints enter with an optional 0/1
    // factor so boundary kinks are represented.
    SubdifferentialSet penalty_subdifferential(const Point& p) const {
        std::vector<Vector> cols;
        for (Eigen::Index a = 0; a < p.f_set.cols(); ++a)
            cols.push_back(mu_ * p.f_set.col(a));

        const double active_tol = cfg_.feasibility_tol;
        for (Eigen::Index j = 0; j < p.constraints.size(); ++j) {
            // constraints within the feasibility tolerance of the boundary, on
            // either side, contribute with an optional 0/1 factor: a
            // machine-epsilon violation must not make its gradient mandatory,
            // or the min-norm element overstates the attainable descent
            const bool violated = p.constraints(j) > active_tol;
            const bool active = !violated && p.constraints(j) > -active_tol;
            if (!violated && !active) continue;
            const Matrix& h = p.con_sets[static_cast<std::size_t>(j)];
            std::vector<Vector> next;
            const bool collapse = cols.size() * (h.cols() + (active ? 1 : 0)) > 512;
            if (collapse) {
                SubdifferentialSet hs;
                for (Eigen::Index b = 0; b < h.cols(); ++b) hs.gradients.push_back(h.col(b));
                const Vector rep = min_norm_direction(hs).direction;
                for (const auto& c : cols) {
                    if (active) next.push_back(c);
                    next.push_back(c + rep);
                }
            } else {
                for (const auto& c : cols) {
                    if (active) next.push_back(c);
                    for (Eigen::Index b = 0; b < h.cols(); ++b) next.push_back(c + h.col(b));
                }
            }
            cols = std::move(next);
        }
        SubdifferentialSet out;
        out.gradients = std::move(cols);
        return out;
    }

    // Norm of the min-norm element of the full penalty subdifferential,
    // projected onto the tangent cone of the box and relative to the
    // penalty-scaled objective gradient.
    double point_certificate(const Point& p, Vector* eta_out = nullptr) const {
        const MinNormResult r = min_norm_direction(penalty_subdifferential(p));
        Vector descent = -r.direction;
        problem_.project_tangent(p.theta, descent);
        if (eta_out) *eta_out = -descent;
        return descent.norm() / (mu_ * (1.0 + p.grad_f.norm()));
    }

    // Certified-descent fallback when the quasi-Newton line search stalls at a
    // kink: Armijo backtracking along the negated min-norm element, whose
    // one-sided derivative bound covers every active piece of the penalty.
    bool fallback_search(const Point& cur, double& alpha_out, double& dnorm_out, Point& next_out,
                         SolveResult& res) {
        Vector eta;
        point_certificate(cur, &eta);
        const double n = eta.norm();
        if (!(n > 0.0)) return false;
        const Vector d = -eta / n;
        const double phi0 = phi(cur);
        const bool dbg = std::getenv("BWOPT_DEBUG_STEERING") != nullptr;
        double t = 1.0;
        for (int it = 0; it < 30; ++it) {
            if (res.fun_evals >= cfg_.max_fun_evals) return false;
            Point trial = make_point(cur.theta + t * d, res);
            const double phit = trial.valid ? phi(trial) : std::numeric_limits<double>::infinity();
            if (dbg)
                std::fprintf(stderr, "fallback t=%.3e n=%.3e phi0=%.9e phit=%.9e dphi=%.3e v=%.3e\n",
                             t, n, phi0, phit, phit - phi0,
                             trial.valid ? trial.v : -1.0);
            if (phit <= phi0 - std::max(cfg_.wolfe_c1 * t * n, phi_noise_floor(cur)) &&
                !step_stalled(cur, trial)) {
                alpha_out = t;
                dnorm_out = n;
                next_out = std::move(trial);
                return true;
            }
            t *= 0.5;
        }
        return false;
    }

    double linearized_violation(const Point& p, const Vector& d) const {
        double l = 0.0;
        for (Eigen::Index j = 0; j < p.constraints.size(); ++j)
            l += std::max(p.constraints(j) + p.con_grads.col(j).dot(d), 0.0);
        return l;
    }

    // Steering: shrink mu until the direction makes sufficient progress toward
    // feasibility relative to the pure violation-reduction direction.
    Vector steering_direction(const Point& p) {
        Vector d = projected_qp_direction(p, mu_);
        if (p.constraints.size() == 0) return d;
        const double l0 = p.v;
        Vector d_ref = projected_qp_direction(p, 0.0);
        const double ref_red = l0 - linearized_violation(p, d_ref);
        const bool dbg = std::getenv("BWOPT_DEBUG_STEERING") != nullptr;
        // at most two cuts per outer iteration: the line search on the penalty
        // restores feasibility regardless of mu, and repeated cuts in a single
        // steering call collapse the objective weight for the rest of the run
        for (int k = 0; k < 2; ++k) {
            const double red = l0 - linearized_violation(p, d);
            if (dbg) {
                std::fprintf(stderr,
                             "steer k=%d mu=%.3e l0=%.3e red=%.3e ref_red=%.3e lin(d)=%.3e "
                             "cmax=%.3e |d|=%.3e\n",
                             k, mu_, l0, red, ref_red, linearized_violation(p, d),
                             p.constraints.maxCoeff(), d.norm());
                for (Eigen::Index j = 0; j < p.constraints.size(); ++j)
                    if (p.constraints(j) > 0.0)
                        std::fprintf(stderr, "  viol j=%ld c=%.3e |a|=%.3e aWa=%.3e a'd=%.3e\n",
                                     static_cast<long>(j), p.constraints(j),
                                     p.con_grads.col(j).norm(),
                                     p.con_grads.col(j).dot(W_ * p.con_grads.col(j)),
                                     p.con_grads.col(j).dot(d));
            }
            // the steering_tol slack keeps small predicted crossings (points
            // sitting on or near the constraint boundary) from cutting mu
            // indefinitely; crossings this small are corrected by later steps
            if (red >= cfg_.c_v * ref_red - cfg_.steering_tol) return d;
            // violation cannot be reduced in the linearization: shrinking mu
            // further cannot help either
            if (l0 > 0.0 && ref_red <= 0.0) return d;
            if (dbg) std::fprintf(stderr, "mu cut (steer) mu=%.3e\n", mu_ * cfg_.c_mu);
            mu_ *= cfg_.c_mu;
            d = projected_qp_direction(p, mu_);
        }
        return d;
    }

    double phi(const Point& p) const { return mu_ * p.f + p.v; }

    // smallest penalty decrease distinguishable from the 1e-8-relative
    // tolerance of the bandwidth bisection and peak search
    double phi_noise_floor(const Point& p) const {
        return 1e-8 * (mu_ * std::abs(p.f) + p.v);
    }

    bool line_search(const Point& cur, const Vector& d, double dphi0, double& alpha_out,
                     Point& next_out, SolveResult& res) {
        const double phi0 = phi(cur);
        double lo = 0.0;
        double hi = std::numeric_limits<double>::infinity();
        double t = 1.0;
        bool have_armijo = false;
        double armijo_t = 0.0;
        Point armijo_pt;
        int bisections = 0;
        for (int it = 0; it < 50; ++it) {
            // a dozen bisections localize the step to ~1e-4 of the bracket; if
            // no acceptable point emerged by then the search is a genuine stall
            // and further halving only burns the evaluation budget
            if (std::isfinite(hi) && bisections >= 12) break;
            if (res.fun_evals >= cfg_.max_fun_evals) break;
            Point trial = make_point(cur.theta + t * d, res);
            const double phit = trial.valid ? phi(trial) : std::numeric_limits<double>::infinity();
            if (phit > phi0 + cfg_.wolfe_c1 * t * dphi0) {
                hi = t;
            } else {
                const double dphit = (mu_ * trial.grad_f + trial.grad_v).dot(d);
                if (dphit < cfg_.wolfe_c2 * dphi0) {
                    lo = t;
                    // only bank points whose decrease clears the evaluation
                    // noise floor; accepting noise-level decreases stalls the
                    // outer loop without real progress
                    if (phi0 - phit >= phi_noise_floor(cur)) {
                        have_armijo = true;
                        armijo_t = t;
                        armijo_pt = std::move(trial);
                    }
                } else {
                    alpha_out = t;
                    next_out = std::move(trial);
                    return true;
                }
            }
            if (std::isfinite(hi) && (hi - lo) <= 1e-10 * std::max(1.0, hi)) break;
            if (std::isfinite(hi)) {
                t = 0.5 * (lo + hi);
                ++bisections;
            } else {
                t = 2.0 * t;
            }
        }
        // curvature unattainable at a kink: fall back to the best Armijo point
        if (have_armijo) {
            alpha_out = armijo_t;
            next_out = std::move(armijo_pt);
            return true;
        }
        return false;
    }

    static bool step_stalled(const Point& cur, const Point& next) {
        return (next.theta - cur.theta).norm() <= 1e-14 * (1.0 + cur.theta.norm());
    }

    struct CacheEntry {
        Vector theta;
        Vector grad_f;
        Vector grad_v;
    };

    void push_cache(const Point& p, int cap) {
        cache_.push_back({p.theta, p.grad_f, p.grad_v});
        while (static_cast<int>(cache_.size()) > cap) cache_.pop_front();
    }

    // Min-norm element of the convex hull of cached penalty gradients
    // mu grad_f + grad_v within the trust radius, normalized by the
    // penalty-scaled objective gradient. The mu normalization keeps the
    // certificate a KKT residual even after steering has shrunk the penalty
    // weight: near a solution the hull mixes gradients from both sides of the
    // active boundary and its min-norm element is O(mu) small.
    double stationarity_norm(const Point& p) const {
        SubdifferentialSet set;
        for (const auto& e : cache_) {
            if ((e.theta - p.theta).norm() > cfg_.cache_radius) continue;
            set.gradients.push_back(mu_ * e.grad_f + e.grad_v);
        }
        if (set.gradients.empty()) set.gradients.push_back(mu_ * p.grad_f + p.grad_v);
        Vector descent = -min_norm_direction(set).direction;
        problem_.project_tangent(p.theta, descent);
        const double cert = descent.norm() / (mu_ * (1.0 + p.grad_f.norm()));
        return std::isfinite(cert) ? cert : std::numeric_limits<double>::infinity();
    }

    bool stationarity_ok(const Point& p, SolveResult& res) {
        const double cache_cert = stationarity_norm(p);
        const double pt_cert = point_certificate(p);
        if (std::getenv("BWOPT_DEBUG_STEERING"))
            std::fprintf(stderr, "cert cache=%.3e point=%.3e mu=%.3e v=%.3e\n", cache_cert,
                         pt_cert, mu_, p.v);
        const double cert = std::min(cache_cert, pt_cert);
        res.stationarity_certificate = cert;
        return cert <= cfg_.stationarity_tol && p.v <= cfg_.feasibility_tol;
    }

    void record_best(SolveResult& res, const Point& p) {
        res.theta = p.theta;
        res.f = p.f;
        res.violation = p.v;
        res.constraints = p.constraints;
    }

    void finish(SolveResult& res, const Point& p, int iters) {
        record_best(res, p);
        res.iterations = iters;
    }

    NonsmoothProblem& problem_;
    SolverConfig cfg_;
    double mu_ = 1.0;
    Matrix W_;  // inverse Hessian approximation
    std::deque<CacheEntry> cache_;
};

// ---------------------------------------------------------------------------
// Synthesis problem: minimize -omega_bw subject to ||S||_inf / S_max - 1 <= 0
// and box constraints on notch parameters, over the scaled decision vector.
// ---------------------------------------------------------------------------

struct BoxBounds {
    double beta_min = 1e-3;
    double beta_max = 1.0;
    double zeta_min = 1e-3;
    double zeta_max = 2.0;
};

class SynthesisProblem : public NonsmoothProblem {
  public:
    SynthesisProblem(const DecoupledPlant& plant, ControllerStructure structure, Vector scaling,
                     SolverConfig config, FrequencyGrid grid, BoxBounds box = {})
        : plant_(plant),
          st_(std::move(structure)),
          scaling_(std::move(scaling)),
          cfg_(std::move(config)),
          grid_(std::move(grid)),
          box_(box) {
        if (scaling_.size() != st_.m())
            throw std::invalid_argument("SynthesisProblem: scaling length must equal n + 2p");
    }

    int dimension() const override { return st_.m(); }

    const ControllerStructure& structure() const { return st_; }
    const Vector& scaling() const { return scaling_; }

    ControllerParams params_from_scaled(const Vector& theta_scaled) const {
        return ControllerParams::from_vector(st_, unscale_params(theta_scaled, scaling_),
                                             scaling_);
    }

    ProblemEvaluation evaluate(const Vector& theta_scaled) override {
        ProblemEvaluation ev;
        const Vector phys = unscale_params(theta_scaled, scaling_);
        const int n = st_.n(), p = st_.p();
        if ((phys.head(n).array() <= 0.0).any() ||
            (p > 0 && (phys.tail(2 * p).array() <= 0.0).any()) ||
            (p > 0 && (phys.segment(n, p).array() > 1.0).any())) {
            ev.valid = false;
            return ev;
        }
        const ControllerParams params = ControllerParams::from_vector(st_, phys, scaling_);

        if (!check_stability(plant_, st_, params).stable) {
            ev.valid = false;
            return ev;
        }

        // any numerical failure past this point (no unity crossing, singular
        // I + L on a near-unstable trial, tangential crossing) marks the trial
        // invalid; the line search treats it as +infinity
        BandwidthResult bw;
        SensitivityPeaks peaks;
        SubdifferentialSet obj;
        try {
            bw = compute_bandwidth(make_loop_evaluator(plant_, st_, params), grid_, cfg_.delta_bw);
            peaks = compute_sensitivity_peaks(
                make_sensitivity_evaluator(make_loop_evaluator(plant_, st_, params)), grid_,
                cfg_.delta_h);
            obj = objective_subgradients(plant_, st_, params, bw);
        } catch (const std::runtime_error&) {
            ev.valid = false;
            return ev;
        }

        ev.f = -bw.omega_bw;
        ev.f_subgradients = Matrix(st_.m(), obj.gradients.size());
        for (std::size_t l = 0; l < obj.gradients.size(); ++l)
            ev.f_subgradients.col(l) = -obj.gradients[l].cwiseProduct(scaling_);

        const SubdifferentialSet con = constraint_subgradients(plant_, st_, params, peaks);
        ev.constraints = Vector::Zero(1);
        ev.constraint_subgradients.resize(1);
        ev.constraints(0) = peaks.hinf / cfg_.s_max - 1.0;
        Matrix hmat(st_.m(), con.gradients.size());
        for (std::size_t l = 0; l < con.gradients.size(); ++l)
            hmat.col(l) = con.gradients[l].cwiseProduct(scaling_) / cfg_.s_max;
        ev.constraint_subgradients[0] = std::move(hmat);
        return ev;
    }

    // Notch depth/width live in a simple box; clamp onto it in scaled space.
    void project(Vector& theta_scaled) const override {
        const int n = st_.n(), p = st_.p();
        for (int j = 0; j < p; ++j) {
            const int ib = n + j, iz = n + p + j;
            theta_scaled(ib) = std::clamp(theta_scaled(ib), box_.beta_min / scaling_(ib),
                                          box_.beta_max / scaling_(ib));
            theta_scaled(iz) = std::clamp(theta_scaled(iz), box_.zeta_min / scaling_(iz),
                                          box_.zeta_max / scaling_(iz));
        }
    }

    void project_tangent(const Vector& theta_scaled, Vector& d) const override {
        const int n = st_.n(), p = st_.p();
        auto clip = [&](int i, double lo, double hi) {
            if (theta_scaled(i) <= lo && d(i) < 0.0) d(i) = 0.0;
            if (theta_scaled(i) >= hi && d(i) > 0.0) d(i) = 0.0;
        };
        for (int j = 0; j < p; ++j) {
            const int ib = n + j, iz = n + p + j;
            clip(ib, box_.beta_min / scaling_(ib), box_.beta_max / scaling_(ib));
            clip(iz, box_.zeta_min / scaling_(iz), box_.zeta_max / scaling_(iz));
        }
    }

  private:
    const DecoupledPlant& plant_;
    ControllerStructure st_;
    Vector scaling_;
    SolverConfig cfg_;
    FrequencyGrid grid_;
    BoxBounds box_;
};

struct SynthesisReport {
    TerminationStatus status = TerminationStatus::NotConvergedBudget;
    ControllerParams params;   // final physical parameters
    double omega_bw = 0.0;     // rad/s
    double hinf = 0.0;
    double violation = 0.0;
    int iterations = 0;
    int fun_evals = 0;
    double stationarity_certificate = 0.0;
    std::vector<IterationRecord> history;
};

inline SynthesisReport synthesize(const DecoupledPlant& plant, const ControllerStructure& st,
                                  const ControllerParams& initial, const SolverConfig& cfg,
                                  const FrequencyGrid& grid, BoxBounds box = {}) {
    initial.validate(st);
    SynthesisProblem problem(plant, st, initial.scaling, cfg, grid, box);
    if (!check_stability(plant, st, initial).stable) {
        const double absc = check_stability(plant, st, initial).spectral_abscissa;
        throw std::runtime_error(
            "synthesize: initial controller does not stabilize the plant (spectral abscissa " +
            std::to_string(absc) + ")");
    }
    BfgsSqpSolver solver(problem, cfg);
    const SolveResult r = solver.solve(scale_params(initial.to_vector(), initial.scaling));

    SynthesisReport rep;
    rep.status = r.status;
    rep.params = problem.params_from_scaled(r.theta);
    rep.omega_bw = -r.f;
    rep.hinf = r.constraints.size() > 0 ? (r.constraints(0) + 1.0) * cfg.s_max : 0.0;
    rep.violation = r.violation;
    rep.iterations = r.iterations;
    rep.fun_evals = r.fun_evals;
    rep.stationarity_certificate = r.stationarity_certificate;
    rep.history = r.history;
    return rep;
}

}  // namespace bwopt
