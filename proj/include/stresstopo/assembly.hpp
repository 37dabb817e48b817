#pragma once

// Global stiffness assembly and linear solves.
//
// Supports are imposed by reduction: the solver only ever sees the block of
// K restricted to the free DOFs.  The sparsity pattern of a regular grid is
// fixed, so it is computed once together with a slot map from each element
// matrix entry to its position in the compressed storage; re-assembly for a
// new density field is then a single pass over the elements.

#include "stresstopo/element.hpp"
#include "stresstopo/errors.hpp"
#include "stresstopo/mesh.hpp"

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#ifdef STRESSTOPO_HAVE_CHOLMOD
#include <Eigen/CholmodSupport>
#endif

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace stresstopo {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

enum class SolverMethod { Automatic, Direct, Pcg };

inline std::string to_string(SolverMethod m) {
    switch (m) {
    case SolverMethod::Automatic: return "auto";
    case SolverMethod::Direct: return "direct";
    case SolverMethod::Pcg: return "pcg";
    }
    return "?";
}

struct SolverConfig {
    SolverMethod method = SolverMethod::Automatic;
    double tol = 1e-8;  ///< relative residual ||K u - f|| / ||f|| for PCG
    long maxit = 5000;  ///< PCG iteration cap
    int direct_threshold = 200000; ///< Automatic picks Direct below this many free DOFs

    void validate() const {
        if (!(tol > 0.0))
            throw DomainError("solver tolerance must be > 0");
        if (maxit < 1)
            throw DomainError("solver maxit must be >= 1");
    }

    SolverMethod resolve(int nfree) const {
        if (method != SolverMethod::Automatic)
            return method;
        return nfree < direct_threshold ? SolverMethod::Direct : SolverMethod::Pcg;
    }
};

/// Split of the global DOFs into constrained and free sets.
class DofPartition {
  public:
    DofPartition() = default;

    DofPartition(int ndof, std::vector<int> fixed) : ndof_(ndof), fixed_(std::move(fixed)) {
        std::sort(fixed_.begin(), fixed_.end());
        fixed_.erase(std::unique(fixed_.begin(), fixed_.end()), fixed_.end());
        for (int d : fixed_)
            if (d < 0 || d >= ndof)
                throw BoundsError("fixed DOF " + std::to_string(d) + " outside [0, " + std::to_string(ndof) + ")");
        to_free_.assign(static_cast<std::size_t>(ndof), -1);
        free_.reserve(static_cast<std::size_t>(ndof) - fixed_.size());
        std::size_t f = 0;
        for (int d = 0; d < ndof; ++d) {
            if (f < fixed_.size() && fixed_[f] == d) {
                ++f;
                continue;
            }
            to_free_[static_cast<std::size_t>(d)] = static_cast<int>(free_.size());
            free_.push_back(d);
        }
    }

    /// Every DOF free.
    static DofPartition all_free(int ndof) { return DofPartition(ndof, {}); }

    int ndof() const noexcept { return ndof_; }
    int nfree() const noexcept { return static_cast<int>(free_.size()); }
    const std::vector<int> &fixed() const noexcept { return fixed_; }
    const std::vector<int> &free() const noexcept { return free_; }
    /// Reduced index of a global DOF, -1 when the DOF is fixed.
    int reduced(int dof) const { return to_free_[static_cast<std::size_t>(dof)]; }

    Vector restrict_to_free(const Vector &full) const {
        if (full.size() != ndof_)
            throw StructuralError("restrict_to_free: vector has " + std::to_string(full.size()) + " entries, expected " +
                                  std::to_string(ndof_));
        Vector out(nfree());
        for (int r = 0; r < nfree(); ++r)
            out[r] = full[free_[static_cast<std::size_t>(r)]];
        return out;
    }

    Vector expand(const Vector &reduced_vec) const {
        if (reduced_vec.size() != nfree())
            throw StructuralError("expand: vector has " + std::to_string(reduced_vec.size()) + " entries, expected " +
                                  std::to_string(nfree()));
        Vector out = Vector::Zero(ndof_);
        for (int r = 0; r < nfree(); ++r)
            out[free_[static_cast<std::size_t>(r)]] = reduced_vec[r];
        return out;
    }

  private:
    int ndof_ = 0;
    std::vector<int> fixed_;
    std::vector<int> free_;
    std::vector<int> to_free_;
};

/// Assembles sum_e E(x_e) L_e^T KE L_e restricted to the free DOFs of a partition.
class StiffnessAssembler {
  public:
    StiffnessAssembler(const GridMesh &mesh, const ElementDofTable &table, const DofPartition &dofs)
        : nele_(mesh.nele()) {
        if (table.rows() != mesh.nele() || table.ndof() != mesh.ndof() || dofs.ndof() != mesh.ndof())
            throw StructuralError("StiffnessAssembler: mesh, DOF table and partition disagree");
        build_pattern(mesh, dofs);
        build_slots(table, dofs);
    }

    int size() const noexcept { return static_cast<int>(K_.rows()); }

    /// Re-fills the matrix values for density field x.  Deterministic element order.
    const SparseMatrix &assemble(const Vector &x, const ElasticityModel &model, const Matrix24 &KE) {
        if (x.size() != nele_)
            throw StructuralError("assemble: density has " + std::to_string(x.size()) + " entries, mesh has " +
                                  std::to_string(nele_) + " elements");
        double *values = K_.valuePtr();
        std::fill(values, values + K_.nonZeros(), 0.0);
        const double *ke = KE.data();
        for (int e = 0; e < nele_; ++e) {
            const double E = simp_modulus(x[e], model);
            const std::int32_t *slot = slots_.data() + static_cast<std::size_t>(e) * 576;
            for (int s = 0; s < 576; ++s)
                if (slot[s] >= 0)
                    values[slot[s]] += E * ke[s];
        }
        return K_;
    }

    const SparseMatrix &matrix() const noexcept { return K_; }

  private:
    void build_pattern(const GridMesh &mesh, const DofPartition &dofs) {
        const int nx = mesh.nelx() + 1, ny = mesh.nely() + 1, nz = mesh.nelz() + 1;
        const int n = dofs.nfree();
        std::vector<int> outer(static_cast<std::size_t>(n) + 1, 0);
        std::vector<int> inner;
        inner.reserve(static_cast<std::size_t>(n) * 81);

        std::vector<int> neighbours;
        neighbours.reserve(27);
        int col = 0;
        // global node IDs increase with (k, i, top-to-bottom); visiting free DOFs in
        // global order keeps the reduced columns ordered.
        for (int k = 0; k < nz; ++k)
            for (int i = 0; i < nx; ++i)
                for (int jj = ny - 1; jj >= 0; --jj) {
                    neighbours.clear();
                    for (int dk = -1; dk <= 1; ++dk)
                        for (int di = -1; di <= 1; ++di)
                            for (int dj = 1; dj >= -1; --dj) {
                                const int kk = k + dk, ii = i + di, j2 = jj + dj;
                                if (kk < 0 || kk >= nz || ii < 0 || ii >= nx || j2 < 0 || j2 >= ny)
                                    continue;
                                neighbours.push_back(mesh.node_id(ii, j2, kk));
                            }
                    std::sort(neighbours.begin(), neighbours.end());
                    const int self = mesh.node_id(i, jj, k);
                    for (int dir = 0; dir < 3; ++dir) {
                        if (dofs.reduced(3 * (self - 1) + dir) < 0)
                            continue;
                        for (int nb : neighbours)
                            for (int d2 = 0; d2 < 3; ++d2) {
                                const int r = dofs.reduced(3 * (nb - 1) + d2);
                                if (r >= 0)
                                    inner.push_back(r);
                            }
                        outer[static_cast<std::size_t>(col) + 1] = static_cast<int>(inner.size());
                        ++col;
                    }
                }

        K_.resize(n, n);
        K_.resizeNonZeros(static_cast<Eigen::Index>(inner.size()));
        std::copy(outer.begin(), outer.end(), K_.outerIndexPtr());
        std::copy(inner.begin(), inner.end(), K_.innerIndexPtr());
        std::fill(K_.valuePtr(), K_.valuePtr() + inner.size(), 0.0);
    }

    void build_slots(const ElementDofTable &table, const DofPartition &dofs) {
        slots_.assign(static_cast<std::size_t>(nele_) * 576, -1);
        const int *outer = K_.outerIndexPtr();
        const int *inner = K_.innerIndexPtr();
        for (int e = 0; e < nele_; ++e) {
            const auto &row = table[e];
            std::array<int, 24> red{};
            for (int a = 0; a < 24; ++a)
                red[static_cast<std::size_t>(a)] = dofs.reduced(row[static_cast<std::size_t>(a)]);
            std::int32_t *slot = slots_.data() + static_cast<std::size_t>(e) * 576;
            for (int b = 0; b < 24; ++b) {
                const int c = red[static_cast<std::size_t>(b)];
                if (c < 0)
                    continue;
                const int *begin = inner + outer[c];
                const int *end = inner + outer[c + 1];
                for (int a = 0; a < 24; ++a) {
                    const int r = red[static_cast<std::size_t>(a)];
                    if (r < 0)
                        continue;
                    const int *it = std::lower_bound(begin, end, r);
                    if (it == end || *it != r)
                        throw StructuralError("StiffnessAssembler: element coupling missing from pattern");
                    // column-major position of KE(a, b)
                    slot[b * 24 + a] = static_cast<std::int32_t>(it - inner);
                }
            }
        }
    }

    int nele_;
    SparseMatrix K_;
    std::vector<std::int32_t> slots_;
};

/// Full ndof x ndof stiffness matrix, K = sum_i E(x_i) L_i^T KE L_i, symmetric.
inline SparseMatrix assemble_global_stiffness(const GridMesh &mesh, const ElementDofTable &table, const Vector &x,
                                              const ElasticityModel &model, const Matrix24 &KE) {
    StiffnessAssembler assembler(mesh, table, DofPartition::all_free(mesh.ndof()));
    // KE is symmetric, so K is (K + K^T)/2 by construction
    return assembler.assemble(x, model, KE);
}

struct BoundaryConditions {
    std::vector<int> fixed_dofs; ///< 0-based
    Vector load;                 ///< length ndof
};

/// Reduced equilibrium system K_ff u_f = F_f.
struct FemSystem {
    DofPartition dofs;
    SparseMatrix K_ff;
    Vector F;
};

namespace detail {

#ifdef STRESSTOPO_HAVE_CHOLMOD
class CholmodFactor : public Eigen::CholmodDecomposition<SparseMatrix, Eigen::Lower> {
  public:
    CholmodFactor() { this->setMode(supernodal_usable() ? Eigen::CholmodSupernodalLLt : Eigen::CholmodSimplicialLLt); }

    double rcond() {
        if (!this->m_cholmodFactor)
            return 0.0;
        return cholmod_rcond(this->m_cholmodFactor, &this->cholmod());
    }

    /// The supernodal path hands dense blocks to LAPACK.  Some BLAS builds
    /// pick kernels the host cannot run correctly and then report spurious
    /// "not positive definite" failures; a small well-conditioned matrix is
    /// factorized once per process to detect that, and the simplicial
    /// (BLAS-free) factorization is used instead.
    static bool supernodal_usable() {
        static const bool ok = [] {
            const int n = 96;
            Eigen::MatrixXd A(n, n);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    A(i, j) = 1.0 / (1.0 + std::abs(i - j)) + (i == j ? n : 0.0);
            const SparseMatrix S = A.sparseView();
            Eigen::CholmodSupernodalLLT<SparseMatrix, Eigen::Lower> llt;
            llt.cholmod().print = 0;
            llt.compute(S);
            if (llt.info() != Eigen::Success)
                return false;
            const Eigen::VectorXd b = Eigen::VectorXd::Ones(n);
            const Eigen::VectorXd x = llt.solve(b);
            return (A * x - b).norm() <= 1e-10 * b.norm();
        }();
        return ok;
    }
};
using DirectFactor = CholmodFactor;
#else
class SimplicialFactor : public Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower> {
  public:
    double rcond() const {
        const Vector d = this->matrixL().nestedExpression().diagonal();
        if (d.size() == 0)
            return 1.0;
        const double ratio = d.cwiseAbs().minCoeff() / d.cwiseAbs().maxCoeff();
        return ratio * ratio;
    }
};
using DirectFactor = SimplicialFactor;
#endif

} // namespace detail

/// Name of the sparse Cholesky used for direct solves in this build.
inline std::string direct_backend_name() {
#ifdef STRESSTOPO_HAVE_CHOLMOD
    return detail::CholmodFactor::supernodal_usable() ? "cholmod-supernodal" : "cholmod-simplicial";
#else
    return "eigen-simplicial";
#endif
}

/// Factor-once, solve-many wrapper over the direct and PCG backends.  The same
/// object serves the equilibrium and the adjoint solve.
class LinearSolver {
  public:
    /// Below this min/max pivot estimate the factorization is treated as singular.
    static constexpr double kSingularRcond = 1e-15;

    explicit LinearSolver(SolverConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

    const SolverConfig &config() const noexcept { return cfg_; }
    SolverMethod method() const noexcept { return method_; }
    long last_iterations() const noexcept { return last_iterations_; }
    double last_residual() const noexcept { return last_residual_; }

    void factorize(const SparseMatrix &K) {
        K_ = &K;
        method_ = cfg_.resolve(static_cast<int>(K.rows()));
        if (method_ == SolverMethod::Direct) {
            if (!direct_)
                direct_ = std::make_unique<detail::DirectFactor>();
            if (pattern_rows_ != K.rows() || pattern_nnz_ != K.nonZeros()) {
                direct_->analyzePattern(K);
                pattern_rows_ = K.rows();
                pattern_nnz_ = K.nonZeros();
            }
            direct_->factorize(K);
            if (direct_->info() != Eigen::Success)
                throw SingularMatrixError("stiffness matrix restricted to free DOFs is not positive definite "
                                          "(are the supports sufficient?)");
            const double rc = direct_->rcond();
            if (!(rc > kSingularRcond))
                throw SingularMatrixError("stiffness matrix restricted to free DOFs is singular (pivot ratio " +
                                          std::to_string(rc) + "); are the supports sufficient?");
        } else {
            if (!pcg_)
                pcg_ = std::make_unique<Pcg>();
            pcg_->setTolerance(cfg_.tol);
            pcg_->setMaxIterations(cfg_.maxit);
            pcg_->compute(K);
        }
    }

    /// Solves K x = rhs with the last factorized matrix.  `guess` seeds PCG.
    Vector solve(const Vector &rhs, const Vector *guess = nullptr) {
        if (!K_)
            throw std::logic_error("LinearSolver::solve called before factorize");
        if (rhs.size() != K_->rows())
            throw StructuralError("LinearSolver::solve: right-hand side has wrong size");
        const double bnorm = rhs.norm();
        last_iterations_ = 0;
        last_residual_ = 0.0;
        if (bnorm == 0.0)
            return Vector::Zero(rhs.size());

        Vector x;
        if (method_ == SolverMethod::Direct) {
            x = direct_->solve(rhs);
        } else {
            x = (guess && guess->size() == rhs.size()) ? Vector(pcg_->solveWithGuess(rhs, *guess))
                                                        : Vector(pcg_->solve(rhs));
            last_iterations_ = pcg_->iterations();
            if (pcg_->info() != Eigen::Success)
                throw SolverError("PCG did not converge in " + std::to_string(cfg_.maxit) +
                                      " iterations (relative residual " + std::to_string(pcg_->error()) + ")",
                                  pcg_->error(), pcg_->iterations());
        }
        if (!x.allFinite())
            throw SingularMatrixError("linear solve produced non-finite values");
        Vector r = (*K_) * x - rhs;
        last_residual_ = r.norm() / bnorm;
        if (last_residual_ > 10.0 * cfg_.tol)
            throw SolverError("residual check failed: relative residual " + std::to_string(last_residual_) +
                                  " exceeds 10*tol",
                              last_residual_, last_iterations_);
        return x;
    }

  private:
    using Pcg = Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper,
                                         Eigen::DiagonalPreconditioner<double>>;

    SolverConfig cfg_;
    SolverMethod method_ = SolverMethod::Direct;
    const SparseMatrix *K_ = nullptr;
    std::unique_ptr<detail::DirectFactor> direct_;
    std::unique_ptr<Pcg> pcg_;
    Eigen::Index pattern_rows_ = -1;
    Eigen::Index pattern_nnz_ = -1;
    long last_iterations_ = 0;
    double last_residual_ = 0.0;
};

/// Builds the reduced system for a density field.
inline FemSystem make_system(const GridMesh &mesh, const ElementDofTable &table, const Vector &x,
                             const ElasticityModel &model, const Matrix24 &KE, const BoundaryConditions &bc) {
    if (bc.load.size() != mesh.ndof())
        throw StructuralError("load vector has " + std::to_string(bc.load.size()) + " entries, expected " +
                              std::to_string(mesh.ndof()));
    FemSystem sys;
    sys.dofs = DofPartition(mesh.ndof(), bc.fixed_dofs);
    StiffnessAssembler assembler(mesh, table, sys.dofs);
    sys.K_ff = assembler.assemble(x, model, KE);
    sys.F = bc.load;
    return sys;
}

/// U with zeros on the fixed DOFs and K_ff U_f = F_f on the free ones.
inline Vector solve_displacement(const FemSystem &system, const SolverConfig &cfg) {
    if (!system.F.allFinite())
        throw DomainError("solve_displacement: load vector is not finite");
    LinearSolver solver(cfg);
    solver.factorize(system.K_ff);
    return system.dofs.expand(solver.solve(system.dofs.restrict_to_free(system.F)));
}

} // namespace stresstopo
