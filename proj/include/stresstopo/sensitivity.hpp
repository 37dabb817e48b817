#pragma once

// Adjoint sensitivity of the p-norm von Mises stress with respect to the
// element densities, and a finite-difference harness to check it.
//
// With w_i = d(pnorm)/d(mises_i) = (mises_i / pnorm)^(p-1) the gradient splits as
//
//   T1_j = w_j  q x_j^(q-1)  dvm_j . (D0 B u_j)           (explicit density term)
//   T2_j = -lambda_j^T (pl x_j^(pl-1) KE) u_j              (through U)
//
// where K lambda = gamma and gamma = sum_i w_i x_i^q L_i^T (D0 B)^T dvm_i is the
// gradient of the p-norm with respect to U at fixed densities.

#include "stresstopo/assembly.hpp"
#include "stresstopo/element.hpp"
#include "stresstopo/mesh.hpp"
#include "stresstopo/stress.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace stresstopo {

/// Rows are d(mises_i)/d(sigma_i).
using MisesGradient = Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor>;

/// Smallest von Mises value used as a divisor: 1e-12 of the field maximum.
inline double mises_floor(const Vector &mises) {
    const double m = mises.size() ? mises.maxCoeff() : 0.0;
    return 1e-12 * m + 1e-300;
}

/// d(mises)/d(sigma) for every element.
inline MisesGradient dvm_dsigma(const StressField &field) {
    const int nele = field.size();
    const double floor = mises_floor(field.mises);
    MisesGradient out(nele, 6);
    for (int i = 0; i < nele; ++i) {
        const auto s = field.S.row(i);
        const double vm = std::max(field.mises[i], floor);
        out(i, 0) = (2.0 * s[0] - s[1] - s[2]) / (2.0 * vm);
        out(i, 1) = (2.0 * s[1] - s[0] - s[2]) / (2.0 * vm);
        out(i, 2) = (2.0 * s[2] - s[0] - s[1]) / (2.0 * vm);
        out(i, 3) = 3.0 * s[3] / vm;
        out(i, 4) = 3.0 * s[4] / vm;
        out(i, 5) = 3.0 * s[5] / vm;
    }
    return out;
}

/// (sum mises^p)^(1/p - 1), the common factor of d(pnorm)/d(mises_i).
inline double pnorm_outer_factor(double pnorm, double p) { return pnorm > 0.0 ? std::pow(pnorm, 1.0 - p) : 0.0; }

/// d(pnorm)/d(mises_i) = (mises_i / pnorm)^(p-1).
inline Vector pnorm_weights(const StressField &field, double p) {
    Vector w = Vector::Zero(field.size());
    if (!(field.pnorm > 0.0))
        return w;
    for (int i = 0; i < field.size(); ++i)
        w[i] = std::pow(field.mises[i] / field.pnorm, p - 1.0);
    return w;
}

inline Vector compute_T1(const StressField &field, const MisesGradient &dvm, const Vector &x,
                         const StressParams &params, const ElementMatrices &em, const ElementDofTable &table,
                         const Vector &U) {
    const int nele = field.size();
    if (x.size() != nele || dvm.rows() != nele || table.rows() != nele)
        throw StructuralError("compute_T1: inconsistent element counts");
    Vector T1 = Vector::Zero(nele);
    if (params.q == 0.0)
        return T1;
    const Vector w = pnorm_weights(field, params.p);
    for (int j = 0; j < nele; ++j) {
        const double xj = std::max(x[j], kDensityFloor);
        const Vector6 sigma = em.DB * table.gather(U, j);
        T1[j] = w[j] * params.q * std::pow(xj, params.q - 1.0) * dvm.row(j).dot(sigma.transpose());
    }
    return T1;
}

/// gradient of the p-norm with respect to U at fixed densities (length ndof).
inline Vector assemble_gamma(const StressField &field, const MisesGradient &dvm, const Vector &x,
                             const StressParams &params, const ElementMatrices &em, const ElementDofTable &table) {
    const int nele = field.size();
    if (x.size() != nele || dvm.rows() != nele || table.rows() != nele)
        throw StructuralError("assemble_gamma: inconsistent element counts");
    const Vector w = pnorm_weights(field, params.p);
    Vector gamma = Vector::Zero(table.ndof());
    for (int i = 0; i < nele; ++i) {
        const double scale = stress_penalty(x[i], params.q) * w[i];
        if (scale == 0.0)
            continue;
        const ElementVector contrib = scale * (em.DB.transpose() * dvm.row(i).transpose());
        table.scatter_add(gamma, i, contrib);
    }
    return gamma;
}

/// K lambda = gamma on the free DOFs, zero on the fixed ones.
inline Vector solve_adjoint(const FemSystem &system, const Vector &gamma, const SolverConfig &cfg) {
    LinearSolver solver(cfg);
    solver.factorize(system.K_ff);
    return system.dofs.expand(solver.solve(system.dofs.restrict_to_free(gamma)));
}

/// dK/dx_j is taken as pl x_j^(pl-1) KE, i.e. without the (E0 - Emin) factor.
inline Vector compute_T2(const Vector &lambda, const Vector &x, const ElasticityModel &model, const Matrix24 &KE,
                         const ElementDofTable &table, const Vector &U) {
    const int nele = table.rows();
    if (x.size() != nele || lambda.size() != table.ndof() || U.size() != table.ndof())
        throw StructuralError("compute_T2: inconsistent sizes");
    Vector T2(nele);
    for (int j = 0; j < nele; ++j) {
        const ElementVector lj = table.gather(lambda, j);
        const ElementVector uj = table.gather(U, j);
        T2[j] = -model.pl * std::pow(x[j], model.pl - 1.0) * lj.dot(KE * uj);
    }
    return T2;
}

struct SensitivityResult {
    double pnorm = 0.0;
    Vector grad;
    Vector T1;
    Vector T2;
    Vector lambda;
    Vector gamma;
    double dpn_dvms = 0.0;
    Vector U;
    StressField field;
};

/// Everything about a stress problem that stays fixed while densities change.
struct StressProblem {
    GridMesh mesh;
    ElementDofTable table;
    ElementMatrices em;
    ElasticityModel model;
    StressParams params;
    BoundaryConditions bc;
    SolverConfig solver;

    StressProblem(GridMesh mesh_, ElasticityModel model_, StressParams params_, BoundaryConditions bc_,
                  SolverConfig solver_ = {}, StrainMatrixSource source = StrainMatrixSource::Tabulated)
        : mesh(mesh_), table(build_dof_table(mesh_)), em(ElementMatrices::make(model_.nu, source)), model(model_),
          params(params_), bc(std::move(bc_)), solver(solver_) {
        model.validate();
        params.validate();
        solver.validate();
        if (bc.load.size() != mesh.ndof())
            throw StructuralError("StressProblem: load vector has " + std::to_string(bc.load.size()) +
                                  " entries, mesh has " + std::to_string(mesh.ndof()) + " DOFs");
    }
};

/// Repeated FEM + stress (+ sensitivity) evaluations on one problem.  Owns the
/// assembler and the factorization; not thread-safe.
class StressAnalysis {
  public:
    explicit StressAnalysis(StressProblem problem)
        : problem_(std::move(problem)), dofs_(problem_.mesh.ndof(), problem_.bc.fixed_dofs),
          assembler_(problem_.mesh, problem_.table, dofs_), solver_(problem_.solver),
          load_f_(dofs_.restrict_to_free(problem_.bc.load)) {}

    const StressProblem &problem() const noexcept { return problem_; }
    const DofPartition &dofs() const noexcept { return dofs_; }
    const LinearSolver &solver() const noexcept { return solver_; }

    /// Densities as used internally: clamped to [kDensityFloor, 1].
    Vector clamp(const Vector &x) const {
        if (x.size() != problem_.mesh.nele())
            throw StructuralError("density has " + std::to_string(x.size()) + " entries, mesh has " +
                                  std::to_string(problem_.mesh.nele()) + " elements");
        if (!x.allFinite())
            throw DomainError("density field contains non-finite values");
        return x.cwiseMax(kDensityFloor).cwiseMin(1.0);
    }

    /// Assemble, factorize, solve for U.
    Vector displacement(const Vector &x) {
        const Vector xc = clamp(x);
        factorize(xc);
        return solve_state();
    }

    /// p-norm stress only (one linear solve).
    StressField stresses(const Vector &x) {
        const Vector xc = clamp(x);
        factorize(xc);
        const Vector U = solve_state();
        return element_stresses(U, xc, problem_.params, problem_.em, problem_.table);
    }

    double pnorm(const Vector &x) { return stresses(x).pnorm; }

    /// Full pipeline: U, stresses, T1, gamma, lambda, T2.
    SensitivityResult sensitivity(const Vector &x) {
        const auto &P = problem_;
        const Vector xc = clamp(x);
        factorize(xc);

        SensitivityResult r;
        r.U = solve_state();
        r.field = element_stresses(r.U, xc, P.params, P.em, P.table);
        r.pnorm = r.field.pnorm;
        r.dpn_dvms = pnorm_outer_factor(r.pnorm, P.params.p);

        const MisesGradient dvm = dvm_dsigma(r.field);
        r.T1 = compute_T1(r.field, dvm, xc, P.params, P.em, P.table, r.U);
        r.gamma = assemble_gamma(r.field, dvm, xc, P.params, P.em, P.table);

        const Vector gamma_f = dofs_.restrict_to_free(r.gamma);
        const Vector *guess = lambda_prev_.size() == gamma_f.size() ? &lambda_prev_ : nullptr;
        lambda_prev_ = solver_.solve(gamma_f, guess);
        r.lambda = dofs_.expand(lambda_prev_);

        r.T2 = compute_T2(r.lambda, xc, P.model, P.em.KE, P.table, r.U);
        r.grad = r.T1 + r.T2;
        return r;
    }

  private:
    void factorize(const Vector &xc) {
        const SparseMatrix &K = assembler_.assemble(xc, problem_.model, problem_.em.KE);
        solver_.factorize(K);
    }

    Vector solve_state() {
        const Vector *guess = u_prev_.size() == load_f_.size() ? &u_prev_ : nullptr;
        u_prev_ = solver_.solve(load_f_, guess);
        return dofs_.expand(u_prev_);
    }

    StressProblem problem_;
    DofPartition dofs_;
    StiffnessAssembler assembler_;
    LinearSolver solver_;
    Vector load_f_;
    Vector u_prev_;
    Vector lambda_prev_;
};

/// One-shot sensitivity of the p-norm stress for density field x.
inline SensitivityResult pnorm_sensitivity(const Vector &x, const GridMesh &mesh, const ElasticityModel &model,
                                           const StressParams &params, const BoundaryConditions &bc,
                                           const SolverConfig &cfg = {}) {
    StressAnalysis analysis(StressProblem(mesh, model, params, bc, cfg));
    return analysis.sensitivity(x);
}

// ---------------------------------------------------------------------------
// Finite-difference verification

enum class DifferenceMode { Forward, Central };

inline std::string to_string(DifferenceMode m) { return m == DifferenceMode::Forward ? "forward" : "central"; }

struct VerificationReport {
    double eps = 0.0;
    DifferenceMode mode = DifferenceMode::Forward;
    Vector analytic;
    Vector fd;
    Vector rel_err;            ///< NaN where the analytic value is below the floor
    std::vector<int> flagged;  ///< elements skipped because |analytic| is below the floor
    double floor = 0.0;        ///< 1e-12 * max |analytic|
    double max_err = 0.0;
    double median_err = 0.0;

    int checked() const { return static_cast<int>(analytic.size()) - static_cast<int>(flagged.size()); }

    /// Fraction of checked elements with rel_err <= tol.
    double fraction_within(double tol) const {
        int ok = 0, n = 0;
        for (Eigen::Index i = 0; i < rel_err.size(); ++i) {
            if (std::isnan(rel_err[i]))
                continue;
            ++n;
            if (rel_err[i] <= tol)
                ++ok;
        }
        return n ? static_cast<double>(ok) / n : 1.0;
    }
};

/// Difference quotients of f around x for every component, compared with
/// `analytic`.  Components whose stencil would leave [lower, upper] fall back
/// to a one-sided second-order stencil (central mode) or a backward
/// difference (forward mode).
inline VerificationReport finite_difference_check(const std::function<double(const Vector &)> &f, const Vector &x,
                                                  const Vector &analytic, double eps, DifferenceMode mode,
                                                  double lower = -std::numeric_limits<double>::infinity(),
                                                  double upper = std::numeric_limits<double>::infinity()) {
    if (!(eps > 0.0))
        throw DomainError("finite_difference_check: eps must be > 0");
    if (analytic.size() != x.size())
        throw StructuralError("finite_difference_check: gradient size mismatch");

    const Eigen::Index n = x.size();
    VerificationReport rep;
    rep.eps = eps;
    rep.mode = mode;
    rep.analytic = analytic;
    rep.fd.resize(n);
    rep.rel_err.resize(n);

    const double f0 = f(x);
    Vector xp = x;
    auto at = [&](Eigen::Index j, double h) {
        xp[j] = x[j] + h;
        const double v = f(xp);
        xp[j] = x[j];
        return v;
    };
    for (Eigen::Index j = 0; j < n; ++j) {
        const bool room_up = x[j] + eps <= upper;
        const bool room_down = x[j] - eps >= lower;
        if (mode == DifferenceMode::Forward) {
            rep.fd[j] = room_up ? (at(j, eps) - f0) / eps : (f0 - at(j, -eps)) / eps;
        } else if (room_up && room_down) {
            rep.fd[j] = (at(j, eps) - at(j, -eps)) / (2.0 * eps);
        } else if (room_down) {
            rep.fd[j] = (3.0 * f0 - 4.0 * at(j, -eps) + at(j, -2.0 * eps)) / (2.0 * eps);
        } else {
            rep.fd[j] = (-3.0 * f0 + 4.0 * at(j, eps) - at(j, 2.0 * eps)) / (2.0 * eps);
        }
    }

    rep.floor = 1e-12 * (n ? analytic.cwiseAbs().maxCoeff() : 0.0);
    std::vector<double> errs;
    errs.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) {
        if (!(std::abs(analytic[j]) > rep.floor)) {
            rep.rel_err[j] = std::numeric_limits<double>::quiet_NaN();
            rep.flagged.push_back(static_cast<int>(j));
            continue;
        }
        rep.rel_err[j] = std::abs((rep.fd[j] - analytic[j]) / analytic[j]);
        errs.push_back(rep.rel_err[j]);
    }
    if (!errs.empty()) {
        rep.max_err = *std::max_element(errs.begin(), errs.end());
        auto mid = errs.begin() + static_cast<std::ptrdiff_t>(errs.size() / 2);
        std::nth_element(errs.begin(), mid, errs.end());
        rep.median_err = *mid;
        if (errs.size() % 2 == 0) {
            const double lower_mid = *std::max_element(errs.begin(), mid);
            rep.median_err = 0.5 * (rep.median_err + lower_mid);
        }
    }
    return rep;
}

/// Checks the adjoint gradient of `analysis` at x against finite differences
/// of the p-norm, perturbing each density inside [kDensityFloor, 1].
inline VerificationReport finite_difference_check(StressAnalysis &analysis, const Vector &x, double eps,
                                                  DifferenceMode mode) {
    const Vector analytic = analysis.sensitivity(x).grad;
    return finite_difference_check([&](const Vector &v) { return analysis.pnorm(v); }, x, analytic, eps, mode,
                                   kDensityFloor, 1.0);
}

/// CSV with one row per element: element (1-based), analytic, fd, rel_err.
inline void write_verification_csv(const VerificationReport &rep, const std::string &path) {
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot open " + path + " for writing");
    out << "element,analytic,fd,rel_err\n" << std::setprecision(17);
    for (Eigen::Index j = 0; j < rep.analytic.size(); ++j) {
        out << (j + 1) << ',' << rep.analytic[j] << ',' << rep.fd[j] << ',';
        if (std::isnan(rep.rel_err[j]))
            out << "nan";
        else
            out << rep.rel_err[j];
        out << '\n';
    }
    if (!out)
        throw IoError("error while writing " + path);
}

} // namespace stresstopo
