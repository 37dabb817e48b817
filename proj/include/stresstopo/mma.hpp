#pragma once

// Method of Moving Asymptotes (Svanberg 1987), in the form used by the
// widely distributed mmasub routine: per-variable asymptotes L, U, the
// albefa/move box, and the raa0-regularized convex approximations.  The
// subproblem has no artificial variables and is solved through its dual.
// A single constraint is handled by bisection on the multiplier; several
// constraints by a projected Newton ascent.

#include "stresstopo/errors.hpp"
#include "stresstopo/mesh.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace stresstopo {

using Matrix = Eigen::MatrixXd;

struct MmaSettings {
    double move = 0.1;
    double asyinit = 0.5;
    double asyincr = 1.2;
    double asydecr = 0.7;
    double albefa = 0.1;
    double raa0 = 1e-5;
    double kkt_tol = 1e-9; ///< relative KKT residual accepted from the dual solve

    void validate() const {
        if (!(move > 0.0 && move <= 1.0))
            throw DomainError("MMA move limit must lie in (0, 1]");
        if (!(asyinit > 0.0 && asyinit <= 1.0))
            throw DomainError("MMA asyinit must lie in (0, 1]");
        if (!(asyincr >= 1.0) || !(asydecr > 0.0 && asydecr <= 1.0))
            throw DomainError("MMA asymptote factors must satisfy asyincr >= 1, 0 < asydecr <= 1");
        if (!(albefa > 0.0 && albefa < 1.0))
            throw DomainError("MMA albefa must lie in (0, 1)");
    }
};

struct MmaState {
    MmaSettings settings;
    Vector low, upp;
    Vector xold1, xold2;
    int iter = 0;
    double last_kkt = 0.0;        ///< KKT residual of the latest subproblem
    Vector last_multipliers;      ///< dual variables of the latest subproblem

    MmaState() = default;
    explicit MmaState(MmaSettings s) : settings(s) { settings.validate(); }
};

namespace detail {

/// Data of the convex separable subproblem restricted to the active variables.
struct MmaSubproblem {
    std::vector<int> idx; // variables being updated
    Vector low, upp, alfa, beta;
    Vector p0, q0;        // objective coefficients
    Matrix P, Q;          // constraint coefficients (m x nact)
    Vector b;             // constraint right-hand sides

    int m() const { return static_cast<int>(b.size()); }
    int n() const { return static_cast<int>(idx.size()); }

    /// Minimizer over [alfa, beta] of the Lagrangian for multipliers lam.
    void primal(const Vector &lam, Vector &x) const {
        x.resize(n());
        for (int j = 0; j < n(); ++j) {
            const double pj = p0[j] + P.col(j).dot(lam);
            const double qj = q0[j] + Q.col(j).dot(lam);
            const double sp = std::sqrt(pj), sq = std::sqrt(qj);
            const double xj = (sp * low[j] + sq * upp[j]) / (sp + sq);
            x[j] = std::clamp(xj, alfa[j], beta[j]);
        }
    }

    /// g(x) - b
    Vector slack(const Vector &x) const {
        Vector g = -b;
        for (int j = 0; j < n(); ++j)
            g += P.col(j) / (upp[j] - x[j]) + Q.col(j) / (x[j] - low[j]);
        return g;
    }

    /// Relative KKT residual of (x, lam): stationarity in x over the box,
    /// primal feasibility, dual feasibility, complementarity.
    double kkt_residual(const Vector &x, const Vector &lam) const {
        double r = 0.0;
        for (int j = 0; j < n(); ++j) {
            const double pj = p0[j] + P.col(j).dot(lam);
            const double qj = q0[j] + Q.col(j).dot(lam);
            const double a = pj / ((upp[j] - x[j]) * (upp[j] - x[j]));
            const double c = qj / ((x[j] - low[j]) * (x[j] - low[j]));
            const double d = a - c;
            double viol = 0.0;
            if (x[j] <= alfa[j] && x[j] >= beta[j])
                viol = 0.0;
            else if (x[j] <= alfa[j])
                viol = std::max(0.0, -d);
            else if (x[j] >= beta[j])
                viol = std::max(0.0, d);
            else
                viol = std::abs(d);
            r = std::max(r, viol / (a + c));
        }
        const Vector s = slack(x);
        for (int i = 0; i < m(); ++i) {
            double scale = std::abs(b[i]);
            for (int j = 0; j < n(); ++j)
                scale += P(i, j) / (upp[j] - x[j]) + Q(i, j) / (x[j] - low[j]);
            scale = std::max(scale, std::numeric_limits<double>::min());
            r = std::max(r, std::max(0.0, s[i]) / scale);
            r = std::max(r, std::max(0.0, -lam[i]));
            r = std::max(r, std::abs(lam[i] * s[i]) / (scale * std::max(1.0, lam[i])));
        }
        return r;
    }
};

inline std::string infeasible_message(const MmaSubproblem &sp, const Vector &lam) {
    Vector x;
    sp.primal(lam, x);
    const Vector s = sp.slack(x);
    std::ostringstream msg;
    msg << "MMA subproblem infeasible: with multipliers up to " << lam.maxCoeff()
        << " the approximated constraints still exceed their bounds by [";
    for (int i = 0; i < s.size(); ++i)
        msg << (i ? ", " : "") << s[i];
    msg << "]; the move limit may be too small for the current constraint violation, or the constraints need "
           "rescaling";
    return msg.str();
}

inline Vector solve_dual_single(const MmaSubproblem &sp, Vector &x) {
    Vector lam = Vector::Zero(1);
    sp.primal(lam, x);
    if (sp.slack(x)[0] <= 0.0)
        return lam;

    double lo = 0.0, hi = 1.0;
    for (;;) {
        lam[0] = hi;
        sp.primal(lam, x);
        if (sp.slack(x)[0] <= 0.0)
            break;
        lo = hi;
        hi *= 2.0;
        if (hi > 1e300)
            throw SubproblemError(infeasible_message(sp, lam));
    }
    for (int it = 0; it < 2000 && hi - lo > 0.0; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi)
            break;
        lam[0] = mid;
        sp.primal(lam, x);
        (sp.slack(x)[0] > 0.0 ? lo : hi) = mid;
    }
    // keep the feasible end of the bracket
    lam[0] = hi;
    sp.primal(lam, x);
    return lam;
}

inline Vector solve_dual_general(const MmaSubproblem &sp, Vector &x) {
    const int m = sp.m();
    Vector lam = Vector::Zero(m);
    auto dual_value = [&](const Vector &l, Vector &xl) {
        sp.primal(l, xl);
        double w = -l.dot(sp.b);
        for (int j = 0; j < sp.n(); ++j) {
            const double pj = sp.p0[j] + sp.P.col(j).dot(l);
            const double qj = sp.q0[j] + sp.Q.col(j).dot(l);
            w += pj / (sp.upp[j] - xl[j]) + qj / (xl[j] - sp.low[j]);
        }
        return w;
    };

    double W = dual_value(lam, x);
    for (int it = 0; it < 500; ++it) {
        const Vector grad = sp.slack(x);
        const double res = sp.kkt_residual(x, lam);
        if (res <= 64.0 * std::numeric_limits<double>::epsilon())
            break;
        if (lam.maxCoeff() > 1e250)
            throw SubproblemError(infeasible_message(sp, lam));

        // Hessian of the dual restricted to x components strictly inside the box
        Matrix H = Matrix::Zero(m, m);
        for (int j = 0; j < sp.n(); ++j) {
            if (x[j] <= sp.alfa[j] || x[j] >= sp.beta[j])
                continue;
            const double ux = sp.upp[j] - x[j], xl = x[j] - sp.low[j];
            const double pj = sp.p0[j] + sp.P.col(j).dot(lam);
            const double qj = sp.q0[j] + sp.Q.col(j).dot(lam);
            const double h = 2.0 * pj / (ux * ux * ux) + 2.0 * qj / (xl * xl * xl);
            const Vector G = sp.P.col(j) / (ux * ux) - sp.Q.col(j) / (xl * xl);
            H.noalias() -= G * G.transpose() / h;
        }

        // free set: multipliers not held at zero by an ascent direction pointing outward
        std::vector<int> freeset;
        for (int i = 0; i < m; ++i)
            if (lam[i] > 0.0 || grad[i] > 0.0)
                freeset.push_back(i);
        Vector dir = Vector::Zero(m);
        if (!freeset.empty()) {
            const int nf = static_cast<int>(freeset.size());
            Matrix Hf(nf, nf);
            Vector gf(nf);
            for (int a = 0; a < nf; ++a) {
                gf[a] = grad[freeset[static_cast<std::size_t>(a)]];
                for (int c = 0; c < nf; ++c)
                    Hf(a, c) = H(freeset[static_cast<std::size_t>(a)], freeset[static_cast<std::size_t>(c)]);
            }
            const double shift = 1e-12 * std::max(1.0, Hf.cwiseAbs().maxCoeff());
            Hf.diagonal().array() -= shift;
            const Vector step = (-Hf).ldlt().solve(gf);
            for (int a = 0; a < nf; ++a)
                dir[freeset[static_cast<std::size_t>(a)]] = step[a];
        }
        if (!dir.allFinite() || dir.dot(grad) <= 0.0)
            dir = grad;

        double t = 1.0;
        bool accepted = false;
        Vector xt;
        for (int ls = 0; ls < 80; ++ls, t *= 0.5) {
            const Vector trial = (lam + t * dir).cwiseMax(0.0);
            const double Wt = dual_value(trial, xt);
            // near the optimum W stops resolving the ascent, so fall back on the residual
            const bool flat = Wt >= W - 16.0 * std::numeric_limits<double>::epsilon() * std::abs(W);
            if (Wt >= W + 1e-4 * grad.dot(trial - lam) || (flat && sp.kkt_residual(xt, trial) < 0.5 * res)) {
                lam = trial;
                W = Wt;
                x = xt;
                accepted = true;
                break;
            }
        }
        if (!accepted)
            break;
    }
    sp.primal(lam, x);
    return lam;
}

} // namespace detail

/// One MMA iteration.  Returns the new design; `state` keeps the asymptotes
/// and the iterate history.  Variables with xmin == xmax are held fixed.
///
/// fval holds the m constraint values (feasible when <= 0) and dfdx their
/// gradients row by row.  f0 is accepted for interface symmetry and unused:
/// the approximation only needs the objective gradient.
inline Vector mma_update(MmaState &state, const Vector &x, [[maybe_unused]] double f0, const Vector &df0,
                         const Vector &fval, const Matrix &dfdx, const Vector &xmin, const Vector &xmax) {
    const MmaSettings &s = state.settings;
    const Eigen::Index n = x.size();
    const Eigen::Index m = fval.size();
    if (m < 1)
        throw StructuralError("mma_update: at least one constraint is required");
    if (df0.size() != n || dfdx.rows() != m || dfdx.cols() != n || xmin.size() != n || xmax.size() != n)
        throw StructuralError("mma_update: inconsistent dimensions");
    if (!df0.allFinite() || !fval.allFinite() || !dfdx.allFinite() || !x.allFinite())
        throw DomainError("mma_update: non-finite input");
    for (Eigen::Index j = 0; j < n; ++j)
        if (!(xmin[j] <= xmax[j]) || x[j] < xmin[j] || x[j] > xmax[j])
            throw DomainError("mma_update: variable " + std::to_string(j) + " violates its bounds");

    if (state.iter == 0 || state.xold1.size() != n) {
        state.xold1 = x;
        state.xold2 = x;
        state.low.resize(n);
        state.upp.resize(n);
        state.iter = 0;
    }
    ++state.iter;

    const Vector range = xmax - xmin;
    for (Eigen::Index j = 0; j < n; ++j) {
        const double r = range[j] > 0.0 ? range[j] : 1.0;
        if (state.iter <= 2 || range[j] <= 0.0) {
            state.low[j] = x[j] - s.asyinit * r;
            state.upp[j] = x[j] + s.asyinit * r;
        } else {
            const double z = (x[j] - state.xold1[j]) * (state.xold1[j] - state.xold2[j]);
            const double factor = z > 0.0 ? s.asyincr : (z < 0.0 ? s.asydecr : 1.0);
            double lo = x[j] - factor * (state.xold1[j] - state.low[j]);
            double up = x[j] + factor * (state.upp[j] - state.xold1[j]);
            lo = std::clamp(lo, x[j] - 10.0 * r, x[j] - 0.01 * r);
            up = std::clamp(up, x[j] + 0.01 * r, x[j] + 10.0 * r);
            state.low[j] = lo;
            state.upp[j] = up;
        }
    }

    detail::MmaSubproblem sp;
    for (Eigen::Index j = 0; j < n; ++j)
        if (range[j] > 0.0)
            sp.idx.push_back(static_cast<int>(j));
    const int na = sp.n();
    sp.low.resize(na);
    sp.upp.resize(na);
    sp.alfa.resize(na);
    sp.beta.resize(na);
    sp.p0.resize(na);
    sp.q0.resize(na);
    sp.P.resize(m, na);
    sp.Q.resize(m, na);
    sp.b = -fval;

    for (int a = 0; a < na; ++a) {
        const int j = sp.idx[static_cast<std::size_t>(a)];
        const double L = state.low[j], U = state.upp[j], xj = x[j];
        sp.low[a] = L;
        sp.upp[a] = U;
        sp.alfa[a] = std::max({L + s.albefa * (xj - L), xj - s.move * range[j], xmin[j]});
        sp.beta[a] = std::min({U - s.albefa * (U - xj), xj + s.move * range[j], xmax[j]});

        const double ux = U - xj, xl = xj - L;
        const double reg = s.raa0 / std::max(range[j], 1e-5);
        const double g0 = df0[j];
        const double pq0 = 0.001 * std::abs(g0) + reg;
        sp.p0[a] = (std::max(g0, 0.0) + pq0) * ux * ux;
        sp.q0[a] = (std::max(-g0, 0.0) + pq0) * xl * xl;
        for (Eigen::Index i = 0; i < m; ++i) {
            const double gi = dfdx(i, j);
            const double pq = 0.001 * std::abs(gi) + reg;
            sp.P(i, a) = (std::max(gi, 0.0) + pq) * ux * ux;
            sp.Q(i, a) = (std::max(-gi, 0.0) + pq) * xl * xl;
            sp.b[i] += sp.P(i, a) / ux + sp.Q(i, a) / xl;
        }
    }

    Vector xs;
    const Vector lam = m == 1 ? detail::solve_dual_single(sp, xs) : detail::solve_dual_general(sp, xs);
    state.last_multipliers = lam;
    state.last_kkt = na ? sp.kkt_residual(xs, lam) : 0.0;
    if (!(state.last_kkt <= s.kkt_tol)) {
        std::ostringstream msg;
        msg << "MMA subproblem dual solve stopped with KKT residual " << state.last_kkt << " (tolerance "
            << s.kkt_tol << ") at iteration " << state.iter;
        throw SubproblemError(msg.str());
    }

    Vector xnew = x;
    for (int a = 0; a < na; ++a)
        xnew[sp.idx[static_cast<std::size_t>(a)]] = xs[a];

    state.xold2 = state.xold1;
    state.xold1 = x;
    return xnew;
}

} // namespace stresstopo
