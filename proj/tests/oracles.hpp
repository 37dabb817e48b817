#pragma once

// Independent reference computations used by the tests.  Nothing here calls
// into the library except for plain data types.

#include "stresstopo/mesh.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Trilinear shape-function gradient of corner (cx, cy, cz) at (xi, eta, zeta) in [0,1]^3.
inline std::array<double, 3> shape_gradient(int cx, int cy, int cz, double xi, double eta, double zeta) {
    const double fx = cx ? xi : 1 - xi, fy = cy ? eta : 1 - eta, fz = cz ? zeta : 1 - zeta;
    const double gx = cx ? 1 : -1, gy = cy ? 1 : -1, gz = cz ? 1 : -1;
    return {gx * fy * fz, fx * gy * fz, fx * fy * gz};
}

/// Corner order (0,0,0) (1,0,0) (1,1,0) (0,1,0) then the same at z = 1.
inline std::array<int, 3> corner(int a) {
    static const int c[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
    return {c[a][0], c[a][1], c[a][2]};
}

/// Engineering-strain B at one point, Voigt order xx yy zz xy yz zx.
inline MatrixXd strain_matrix(double xi, double eta, double zeta) {
    MatrixXd B = MatrixXd::Zero(6, 24);
    for (int a = 0; a < 8; ++a) {
        const auto c = corner(a);
        const auto g = shape_gradient(c[0], c[1], c[2], xi, eta, zeta);
        B(0, 3 * a) = g[0];
        B(1, 3 * a + 1) = g[1];
        B(2, 3 * a + 2) = g[2];
        B(3, 3 * a) = g[1];
        B(3, 3 * a + 1) = g[0];
        B(4, 3 * a + 1) = g[2];
        B(4, 3 * a + 2) = g[1];
        B(5, 3 * a) = g[2];
        B(5, 3 * a + 2) = g[0];
    }
    return B;
}

inline MatrixXd elasticity(double nu) {
    const double lam = nu / ((1 + nu) * (1 - 2 * nu));
    const double mu = 1.0 / (2 * (1 + nu));
    MatrixXd D = MatrixXd::Zero(6, 6);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c)
            D(r, c) = lam;
        D(r, r) += 2 * mu;
        D(r + 3, r + 3) = mu;
    }
    return D;
}

/// Unit-cube stiffness by 2x2x2 Gauss-Legendre quadrature.
inline MatrixXd gauss_stiffness(double nu) {
    const double g[2] = {0.5 - 0.5 / std::sqrt(3.0), 0.5 + 0.5 / std::sqrt(3.0)};
    const MatrixXd D = elasticity(nu);
    MatrixXd K = MatrixXd::Zero(24, 24);
    for (double a : g)
        for (double b : g)
            for (double c : g) {
                const MatrixXd B = strain_matrix(a, b, c);
                K += 0.125 * B.transpose() * D * B;
            }
    return K;
}

/// Global DOFs of element (i, j, k) by walking its corners through node_id.
inline std::array<int, 24> element_dofs(const stresstopo::GridMesh &mesh, int i, int j, int k) {
    std::array<int, 24> d{};
    for (int a = 0; a < 8; ++a) {
        const auto c = corner(a);
        const int n = mesh.node_id(i + c[0], j + c[1], k + c[2]);
        for (int r = 0; r < 3; ++r)
            d[static_cast<std::size_t>(3 * a + r)] = 3 * (n - 1) + r;
    }
    return d;
}

/// Dense global stiffness by direct element loops (no sparsity, no reduction).
inline MatrixXd dense_stiffness(const stresstopo::GridMesh &mesh, const VectorXd &modulus_per_element,
                                const MatrixXd &KE) {
    MatrixXd K = MatrixXd::Zero(mesh.ndof(), mesh.ndof());
    for (int k = 0; k < mesh.nelz(); ++k)
        for (int i = 0; i < mesh.nelx(); ++i)
            for (int j = 0; j < mesh.nely(); ++j) {
                const auto d = element_dofs(mesh, i, j, k);
                const double E = modulus_per_element[mesh.element_index(i, j, k)];
                for (int r = 0; r < 24; ++r)
                    for (int c = 0; c < 24; ++c)
                        K(d[static_cast<std::size_t>(r)], d[static_cast<std::size_t>(c)]) += E * KE(r, c);
            }
    return K;
}

/// Solves K u = f with the rows/columns in `fixed` removed; fixed entries are zero.
inline VectorXd dense_solve(const MatrixXd &K, const VectorXd &f, const std::vector<int> &fixed) {
    std::vector<char> is_fixed(static_cast<std::size_t>(K.rows()), 0);
    for (int d : fixed)
        is_fixed[static_cast<std::size_t>(d)] = 1;
    std::vector<int> freed;
    for (int d = 0; d < K.rows(); ++d)
        if (!is_fixed[static_cast<std::size_t>(d)])
            freed.push_back(d);
    const int n = static_cast<int>(freed.size());
    MatrixXd Kf(n, n);
    VectorXd ff(n);
    for (int r = 0; r < n; ++r) {
        ff[r] = f[freed[static_cast<std::size_t>(r)]];
        for (int c = 0; c < n; ++c)
            Kf(r, c) = K(freed[static_cast<std::size_t>(r)], freed[static_cast<std::size_t>(c)]);
    }
    const VectorXd uf = Kf.ldlt().solve(ff);
    VectorXd u = VectorXd::Zero(K.rows());
    for (int r = 0; r < n; ++r)
        u[freed[static_cast<std::size_t>(r)]] = uf[r];
    return u;
}

/// Minimizer of sum_j c_j (x_j - a_j)^2 subject to sum_j w_j x_j <= V and
/// lo <= x <= hi, found by bisection on the multiplier of the linear constraint.
inline VectorXd constrained_quadratic_minimizer(const VectorXd &c, const VectorXd &a, const VectorXd &w, double V,
                                                double lo, double hi) {
    auto x_of = [&](double mu) {
        VectorXd x(a.size());
        for (Eigen::Index j = 0; j < a.size(); ++j)
            x[j] = std::min(hi, std::max(lo, a[j] - mu * w[j] / (2 * c[j])));
        return x;
    };
    if (w.dot(x_of(0.0)) <= V)
        return x_of(0.0);
    double l = 0.0, u = 1.0;
    while (w.dot(x_of(u)) > V)
        u *= 2;
    for (int it = 0; it < 200; ++it) {
        const double m = 0.5 * (l + u);
        (w.dot(x_of(m)) > V ? l : u) = m;
    }
    return x_of(0.5 * (l + u));
}

/// p-norm von Mises stress of a grid design evaluated in long double.
///
/// Stiffness assembly, stresses and the p-norm all run in extended precision.
/// Displacements come from iterative refinement: residuals use the exact
/// long double stiffness of the design being evaluated, corrections come from
/// a double Cholesky factor of a reference design.  Differences of nearby
/// designs therefore keep about three more digits than a double pipeline,
/// which is what central differences of small gradient entries need.
class ExtendedPnorm {
  public:
    using Real = long double;
    using RVec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

    struct Params {
        double nu = 0.3, pl = 3.0, q = 0.5, p = 8.0, emin = 1e-9;
    };

    /// `B` is the 6 x 24 stress-recovery matrix (passed as data).
    ExtendedPnorm(const stresstopo::GridMesh &mesh, const std::vector<int> &fixed, const VectorXd &load,
                  const MatrixXd &B, Params prm)
        : mesh_(mesh), prm_(prm) {
        const int nele = mesh.nele();
        dofs_.resize(static_cast<std::size_t>(nele));
        for (int k = 0; k < mesh.nelz(); ++k)
            for (int i = 0; i < mesh.nelx(); ++i)
                for (int j = 0; j < mesh.nely(); ++j)
                    dofs_[static_cast<std::size_t>(mesh.element_index(i, j, k))] = element_dofs(mesh, i, j, k);

        std::vector<char> is_fixed(static_cast<std::size_t>(mesh.ndof()), 0);
        for (int d : fixed)
            is_fixed[static_cast<std::size_t>(d)] = 1;
        free_.assign(static_cast<std::size_t>(mesh.ndof()), -1);
        for (int d = 0; d < mesh.ndof(); ++d)
            if (!is_fixed[static_cast<std::size_t>(d)])
                free_[static_cast<std::size_t>(d)] = nfree_++;
        f_.resize(nfree_);
        for (int d = 0; d < mesh.ndof(); ++d)
            if (free_[static_cast<std::size_t>(d)] >= 0)
                f_[free_[static_cast<std::size_t>(d)]] = load[d];

        Eigen::Matrix<Real, 6, 6> D = Eigen::Matrix<Real, 6, 6>::Zero();
        const Real nu = prm.nu, lam = nu / ((1 + nu) * (1 - 2 * nu)), mu = 1 / (2 * (1 + nu));
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c)
                D(r, c) = lam;
            D(r, r) += 2 * mu;
            D(r + 3, r + 3) = mu;
        }
        const Real g[2] = {0.5L - 0.5L / std::sqrt(3.0L), 0.5L + 0.5L / std::sqrt(3.0L)};
        KE_.setZero();
        for (Real a : g)
            for (Real b : g)
                for (Real c : g) {
                    const Eigen::Matrix<Real, 6, 24> Bq = strain_matrix_ext(a, b, c);
                    KE_ += 0.125L * Bq.transpose() * D * Bq;
                }
        DB_ = D * B.cast<Real>();
        build_pattern();
    }

    /// Factorizes the reference design used for the refinement corrections.
    void set_reference(const VectorXd &x) {
        assemble(x);
        const Eigen::SparseMatrix<double> Kd = K_.cast<double>();
        if (!analyzed_) {
            llt_.analyzePattern(Kd);
            analyzed_ = true;
        }
        llt_.factorize(Kd);
        have_reference_ = llt_.info() == Eigen::Success;
    }

    Real operator()(const VectorXd &x) {
        if (!have_reference_)
            set_reference(x);
        assemble(x);
        RVec u = RVec::Zero(nfree_);
        Real last = std::numeric_limits<Real>::infinity();
        for (int it = 0; it < 60; ++it) {
            const RVec r = f_ - K_ * u;
            const Eigen::VectorXd rd = r.cast<double>();
            const RVec du = llt_.solve(rd).cast<Real>();
            u += du;
            const Real step = du.cwiseAbs().maxCoeff();
            if (step <= 4 * std::numeric_limits<Real>::epsilon() * u.cwiseAbs().maxCoeff() || step >= last)
                break;
            last = step;
        }
        return pnorm(x, u);
    }

    /// (P(x + eps e_j) - P(x - eps e_j)) / (2 eps) for every element, with the
    /// difference formed in long double.
    VectorXd central_differences(const VectorXd &x, double eps) {
        set_reference(x);
        VectorXd fd(x.size());
        for (Eigen::Index j = 0; j < x.size(); ++j) {
            VectorXd xp = x, xm = x;
            xp[j] += eps;
            xm[j] -= eps;
            const Real h = static_cast<Real>(xp[j]) - static_cast<Real>(xm[j]);
            fd[j] = static_cast<double>(((*this)(xp) - (*this)(xm)) / h);
        }
        return fd;
    }

  private:
    static Eigen::Matrix<Real, 6, 24> strain_matrix_ext(Real xi, Real eta, Real zeta) {
        Eigen::Matrix<Real, 6, 24> B = Eigen::Matrix<Real, 6, 24>::Zero();
        for (int a = 0; a < 8; ++a) {
            const auto c = corner(a);
            const Real fx = c[0] ? xi : 1 - xi, fy = c[1] ? eta : 1 - eta, fz = c[2] ? zeta : 1 - zeta;
            const Real gx = c[0] ? 1 : -1, gy = c[1] ? 1 : -1, gz = c[2] ? 1 : -1;
            const Real d0 = gx * fy * fz, d1 = fx * gy * fz, d2 = fx * fy * gz;
            B(0, 3 * a) = d0;
            B(1, 3 * a + 1) = d1;
            B(2, 3 * a + 2) = d2;
            B(3, 3 * a) = d1;
            B(3, 3 * a + 1) = d0;
            B(4, 3 * a + 1) = d2;
            B(4, 3 * a + 2) = d1;
            B(5, 3 * a) = d2;
            B(5, 3 * a + 2) = d0;
        }
        return B;
    }

    int free_of(int e, int r) const {
        return free_[static_cast<std::size_t>(dofs_[static_cast<std::size_t>(e)][static_cast<std::size_t>(r)])];
    }

    void build_pattern() {
        std::vector<Eigen::Triplet<Real>> t;
        for (int e = 0; e < mesh_.nele(); ++e)
            for (int r = 0; r < 24; ++r)
                for (int c = 0; c < 24; ++c)
                    if (free_of(e, r) >= 0 && free_of(e, c) >= 0)
                        t.emplace_back(free_of(e, r), free_of(e, c), 1);
        K_.resize(nfree_, nfree_);
        K_.setFromTriplets(t.begin(), t.end());
        K_.makeCompressed();
        slot_.resize(static_cast<std::size_t>(mesh_.nele()));
        for (int e = 0; e < mesh_.nele(); ++e)
            for (int r = 0; r < 24; ++r)
                for (int c = 0; c < 24; ++c) {
                    const int a = free_of(e, r), b = free_of(e, c);
                    int s = -1;
                    if (a >= 0 && b >= 0) {
                        const int *beg = K_.innerIndexPtr() + K_.outerIndexPtr()[b];
                        const int *end = K_.innerIndexPtr() + K_.outerIndexPtr()[b + 1];
                        s = static_cast<int>(std::lower_bound(beg, end, a) - K_.innerIndexPtr());
                    }
                    slot_[static_cast<std::size_t>(e)][static_cast<std::size_t>(24 * r + c)] = s;
                }
    }

    void assemble(const VectorXd &x) {
        Real *v = K_.valuePtr();
        std::fill(v, v + K_.nonZeros(), Real(0));
        const Real emin = prm_.emin;
        for (int e = 0; e < mesh_.nele(); ++e) {
            const Real E = emin + std::pow(static_cast<Real>(x[e]), static_cast<Real>(prm_.pl)) * (1 - emin);
            const auto &sl = slot_[static_cast<std::size_t>(e)];
            for (int k = 0; k < 576; ++k)
                if (sl[static_cast<std::size_t>(k)] >= 0)
                    v[sl[static_cast<std::size_t>(k)]] += E * KE_(k / 24, k % 24);
        }
    }

    Real pnorm(const VectorXd &x, const RVec &u) const {
        RVec vm(mesh_.nele());
        for (int e = 0; e < mesh_.nele(); ++e) {
            Eigen::Matrix<Real, 24, 1> ue;
            for (int r = 0; r < 24; ++r) {
                const int a = free_of(e, r);
                ue[r] = a < 0 ? Real(0) : u[a];
            }
            const Eigen::Matrix<Real, 6, 1> s =
                std::pow(static_cast<Real>(x[e]), static_cast<Real>(prm_.q)) * (DB_ * ue);
            const Real a = s[0] - s[1], b = s[0] - s[2], c = s[1] - s[2];
            vm[e] = std::sqrt(0.5L * (a * a + b * b + c * c) + 3 * (s[3] * s[3] + s[4] * s[4] + s[5] * s[5]));
        }
        const Real m = vm.maxCoeff();
        Real sum = 0;
        for (int e = 0; e < mesh_.nele(); ++e)
            sum += std::pow(vm[e] / m, static_cast<Real>(prm_.p));
        return m * std::pow(sum, 1 / static_cast<Real>(prm_.p));
    }

    stresstopo::GridMesh mesh_;
    Params prm_;
    std::vector<std::array<int, 24>> dofs_;
    std::vector<int> free_;
    int nfree_ = 0;
    RVec f_;
    Eigen::Matrix<Real, 24, 24> KE_;
    Eigen::Matrix<Real, 6, 24> DB_;
    Eigen::SparseMatrix<Real> K_;
    std::vector<std::array<int, 576>> slot_;
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt_;
    bool analyzed_ = false;
    bool have_reference_ = false;
};

} // namespace oracle
