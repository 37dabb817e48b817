#pragma once

// Material model and unit-cube hexahedral element matrices.

#include "stresstopo/errors.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <string>

namespace stresstopo {

using Matrix6 = Eigen::Matrix<double, 6, 6>;
using Matrix6x24 = Eigen::Matrix<double, 6, 24>;
using Matrix24 = Eigen::Matrix<double, 24, 24>;
using Vector6 = Eigen::Matrix<double, 6, 1>;

/// Lowest density used wherever x^(q-1) or a passive region needs a nonzero value.
inline constexpr double kDensityFloor = 1e-4;

struct ElasticityModel {
    double nu = 0.3;
    double E0 = 1.0;
    double Emin = 1e-9;
    double pl = 3.0;

    void validate() const {
        if (!(nu >= 0.0 && nu < 0.5))
            throw DomainError("Poisson ratio must lie in [0, 0.5), got " + std::to_string(nu));
        if (!(Emin > 0.0 && Emin < E0))
            throw DomainError("moduli must satisfy 0 < Emin < E0");
        if (!(pl >= 1.0))
            throw DomainError("penalization exponent pl must be >= 1, got " + std::to_string(pl));
    }
};

/// Isotropic constitutive matrix with unit Young's modulus, Voigt order
/// (xx, yy, zz, xy, yz, zx) with engineering shear strains.
inline Matrix6 constitutive_matrix(double nu) {
    if (!(nu >= 0.0 && nu < 0.5))
        throw DomainError("constitutive_matrix: nu must lie in [0, 0.5) (nu >= 0.5 is incompressible), got " +
                          std::to_string(nu));
    Matrix6 D = Matrix6::Zero();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            D(r, c) = (r == c) ? 1.0 - nu : nu;
    for (int r = 3; r < 6; ++r)
        D(r, r) = (1.0 - 2.0 * nu) / 2.0;
    return D / ((1.0 + nu) * (1.0 - 2.0 * nu));
}

/// Closed-form stiffness of a solid unit cube (E = 1).
///
/// The 14 distinct entries are linear in nu, k = A [1; nu] / 144, arranged in
/// the 6x6 block pattern K1..K6.
inline Matrix24 element_stiffness(double nu) {
    if (!(nu >= 0.0 && nu < 0.5))
        throw DomainError("element_stiffness: nu must lie in [0, 0.5), got " + std::to_string(nu));

    static constexpr std::array<double, 14> a0 = {32, 6, -8, 6, -6, 4, 3, -6, -10, 3, -3, -3, -4, -8};
    static constexpr std::array<double, 14> a1 = {-48, 0, 0, -24, 24, 0, 0, 0, 12, -12, 0, 12, 12, 12};
    std::array<double, 15> kv{}; // 1-based
    for (std::size_t n = 0; n < 14; ++n)
        kv[n + 1] = (a0[n] + a1[n] * nu) / 144.0;

    using Block = Eigen::Matrix<double, 6, 6>;
    auto block = [&](const std::array<std::array<int, 6>, 6> &idx) {
        Block b;
        for (int r = 0; r < 6; ++r)
            for (int c = 0; c < 6; ++c)
                b(r, c) = kv[static_cast<std::size_t>(idx[r][c])];
        return b;
    };

    const Block K1 = block({{{1, 2, 2, 3, 5, 5},
                             {2, 1, 2, 4, 6, 7},
                             {2, 2, 1, 4, 7, 6},
                             {3, 4, 4, 1, 8, 8},
                             {5, 6, 7, 8, 1, 2},
                             {5, 7, 6, 8, 2, 1}}});
    const Block K2 = block({{{9, 8, 12, 6, 4, 7},
                             {8, 9, 12, 5, 3, 5},
                             {10, 10, 13, 7, 4, 6},
                             {6, 5, 11, 9, 2, 10},
                             {4, 3, 5, 2, 9, 12},
                             {11, 4, 6, 12, 10, 13}}});
    const Block K3 = block({{{6, 7, 4, 9, 12, 8},
                             {7, 6, 4, 10, 13, 10},
                             {5, 5, 3, 8, 12, 9},
                             {9, 10, 2, 6, 11, 5},
                             {12, 13, 10, 11, 6, 4},
                             {2, 12, 9, 4, 5, 3}}});
    const Block K4 = block({{{14, 11, 11, 13, 10, 10},
                             {11, 14, 11, 12, 9, 8},
                             {11, 11, 14, 12, 8, 9},
                             {13, 12, 12, 14, 7, 7},
                             {10, 9, 8, 7, 14, 11},
                             {10, 8, 9, 7, 11, 14}}});
    const Block K5 = block({{{1, 2, 8, 3, 5, 4},
                             {2, 1, 8, 4, 6, 11},
                             {8, 8, 1, 5, 11, 6},
                             {3, 4, 5, 1, 8, 2},
                             {5, 6, 11, 8, 1, 8},
                             {4, 11, 6, 2, 8, 1}}});
    const Block K6 = block({{{14, 11, 7, 13, 10, 12},
                             {11, 14, 7, 12, 9, 2},
                             {7, 7, 14, 10, 2, 9},
                             {13, 12, 10, 14, 7, 11},
                             {10, 9, 2, 7, 14, 7},
                             {12, 2, 9, 11, 7, 14}}});

    Matrix24 KE;
    KE << K1, K2, K3, K4,                                         //
        K2.transpose(), K5, K6, K3.transpose(),                   //
        K3.transpose(), K6, K5.transpose(), K2.transpose(),       //
        K4, K3, K2, K1.transpose();
    KE /= (nu + 1.0) * (1.0 - 2.0 * nu);
    // symmetrize to the last bit
    return 0.5 * (KE + KE.transpose());
}

/// Strain-displacement matrix of the unit trilinear hexahedron at local
/// point (xi, eta, zeta) in [0,1]^3, columns in ElementDofTable order.
inline Matrix6x24 strain_displacement_at(double xi, double eta, double zeta) {
    static constexpr std::array<std::array<int, 3>, 8> corners = {
        {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}}};
    auto lin = [](double t, int side) { return side ? t : 1.0 - t; };
    auto dlin = [](int side) { return side ? 1.0 : -1.0; };

    Matrix6x24 B = Matrix6x24::Zero();
    for (int a = 0; a < 8; ++a) {
        const auto &c = corners[static_cast<std::size_t>(a)];
        const double dx = dlin(c[0]) * lin(eta, c[1]) * lin(zeta, c[2]);
        const double dy = lin(xi, c[0]) * dlin(c[1]) * lin(zeta, c[2]);
        const double dz = lin(xi, c[0]) * lin(eta, c[1]) * dlin(c[2]);
        const int col = 3 * a;
        B(0, col) = dx;
        B(1, col + 1) = dy;
        B(2, col + 2) = dz;
        B(3, col) = dy;
        B(3, col + 1) = dx;
        B(4, col + 1) = dz;
        B(4, col + 2) = dy;
        B(5, col) = dz;
        B(5, col + 2) = dx;
    }
    return B;
}

/// Local coordinate of the Gauss point at which the stress table below is
/// evaluated: (1 + 1/sqrt(3)) / 2 along each axis.
inline double stress_point_coordinate() { return 0.5 * (1.0 + 1.0 / std::sqrt(3.0)); }

/// The tabulated single-point strain-displacement matrix used for stress
/// recovery, reproduced digit for digit (5 significant figures).
inline Matrix6x24 strain_displacement_matrix() {
    constexpr double a = 0.044658, b = 0.16667, c = 0.62201;
    Eigen::Matrix<double, 6, 8> B1, B2, B3;
    B1 << -a, 0, 0, a, 0, 0, b, 0,       //
        0, -a, 0, 0, -b, 0, 0, b,        //
        0, 0, -a, 0, 0, -b, 0, 0,        //
        -a, -a, 0, -b, a, 0, b, b,       //
        0, -a, -a, 0, -b, -b, 0, -c,     //
        -a, 0, -a, -b, 0, a, -c, 0;
    B2 << 0, -b, 0, 0, -b, 0, 0, b,      //
        0, 0, a, 0, 0, -b, 0, 0,         //
        -c, 0, 0, -b, 0, 0, a, 0,        //
        0, a, -b, 0, -b, -b, 0, -c,      //
        b, 0, -b, a, 0, a, -b, 0,        //
        b, -b, 0, -b, a, 0, -b, b;
    B3 << 0, 0, c, 0, 0, -c, 0, 0,       //
        -c, 0, 0, c, 0, 0, b, 0,         //
        0, b, 0, 0, c, 0, 0, b,          //
        b, 0, c, c, 0, b, -c, 0,         //
        b, -c, 0, c, c, 0, b, b,         //
        0, b, c, 0, c, b, 0, -c;
    Matrix6x24 B;
    B << B1, B2, B3;
    return B;
}

enum class StrainMatrixSource {
    Tabulated, ///< the 5-digit table (reproduces published stress values)
    Analytic,  ///< exact shape-function derivatives at the same Gauss point
};

/// D0, B and KE for one material; built once and shared read-only.
struct ElementMatrices {
    Matrix6 D0;
    Matrix6x24 B;
    Matrix24 KE;
    Matrix6x24 DB; ///< D0 * B

    static ElementMatrices make(double nu, StrainMatrixSource source = StrainMatrixSource::Tabulated) {
        ElementMatrices em;
        em.D0 = constitutive_matrix(nu);
        if (source == StrainMatrixSource::Tabulated) {
            em.B = strain_displacement_matrix();
        } else {
            const double g = stress_point_coordinate();
            em.B = strain_displacement_at(g, g, g);
        }
        em.KE = element_stiffness(nu);
        em.DB = em.D0 * em.B;
        return em;
    }
};

/// SIMP interpolation E(x) = Emin + x^pl (E0 - Emin).
inline double simp_modulus(double x, const ElasticityModel &model) {
    if (!(x >= 0.0 && x <= 1.0))
        throw DomainError("simp_modulus: density must lie in [0, 1], got " + std::to_string(x));
    return model.Emin + std::pow(x, model.pl) * (model.E0 - model.Emin);
}

/// Stress relaxation factor eta(x) = x^q; eta(0) = 0 for q > 0.
inline double stress_penalty(double x, double q) {
    if (!(x >= 0.0) || !(q >= 0.0))
        throw DomainError("stress_penalty: requires x >= 0 and q >= 0");
    if (x == 0.0)
        return q > 0.0 ? 0.0 : 1.0;
    return std::pow(x, q);
}

} // namespace stresstopo
