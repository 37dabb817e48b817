#include "oracles.hpp"

#include "stresstopo/element.hpp"
#include "stresstopo/mesh.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <set>

using namespace stresstopo;

TEST(GridMesh, CountsAndFirstNode) {
    const GridMesh m(4, 3, 2);
    EXPECT_EQ(m.nele(), 24);
    EXPECT_EQ(m.nnode(), 5 * 4 * 3);
    EXPECT_EQ(m.ndof(), 180);
    EXPECT_EQ(m.node_id(0, 3, 0), 1);
}

TEST(GridMesh, NodeIdOnUnitCube) {
    const GridMesh m(1, 1, 1);
    EXPECT_EQ(m.node_id(0, 1, 0), 1);
    EXPECT_EQ(m.node_id(0, 0, 0), 2);
    EXPECT_EQ(m.node_id(1, 0, 0), 4);
    EXPECT_EQ(m.node_id(0, 0, 1), 6);
}

TEST(GridMesh, NodeIdIsABijection) {
    const GridMesh m(3, 4, 2);
    std::set<int> seen;
    for (int k = 0; k <= 2; ++k)
        for (int i = 0; i <= 3; ++i)
            for (int j = 0; j <= 4; ++j)
                seen.insert(m.node_id(i, j, k));
    EXPECT_EQ(static_cast<int>(seen.size()), m.nnode());
    EXPECT_EQ(*seen.begin(), 1);
    EXPECT_EQ(*seen.rbegin(), m.nnode());
}

TEST(GridMesh, OutOfRangeThrows) {
    const GridMesh m(2, 2, 1);
    EXPECT_THROW(m.node_id(3, 0, 0), BoundsError);
    EXPECT_THROW(m.node_id(0, -1, 0), BoundsError);
    EXPECT_THROW(m.element_index(2, 0, 0), BoundsError);
    EXPECT_THROW(m.element_coords(4), BoundsError);
    EXPECT_THROW(GridMesh(0, 1, 1), DomainError);
}

TEST(GridMesh, ElementCoordsInvertElementIndex) {
    const GridMesh m(5, 3, 2);
    for (int e = 0; e < m.nele(); ++e) {
        const auto [i, j, k] = m.element_coords(e);
        EXPECT_EQ(m.element_index(i, j, k), e);
    }
}

TEST(ElementDofTable, UnitCubeRow) {
    const GridMesh m(1, 1, 1);
    const ElementDofTable t = build_dof_table(m);
    ASSERT_EQ(t.rows(), 1);
    const std::array<int, 24> expected1 = {4,  5,  6,  10, 11, 12, 7,  8,  9,  1,  2,  3,
                                           16, 17, 18, 22, 23, 24, 19, 20, 21, 13, 14, 15};
    for (int c = 0; c < 24; ++c)
        EXPECT_EQ(t[0][static_cast<std::size_t>(c)] + 1, expected1[static_cast<std::size_t>(c)]) << "column " << c;
}

TEST(ElementDofTable, MatchesCornerWalk) {
    const GridMesh m(4, 3, 3);
    const ElementDofTable t = build_dof_table(m);
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 3; ++j) {
                const auto ref = oracle::element_dofs(m, i, j, k);
                const auto &row = t[m.element_index(i, j, k)];
                for (int c = 0; c < 24; ++c)
                    ASSERT_EQ(row[static_cast<std::size_t>(c)], ref[static_cast<std::size_t>(c)]);
            }
}

TEST(ElementDofTable, NeighboursShareTwelveDofs) {
    const GridMesh m(2, 1, 1);
    const ElementDofTable t = build_dof_table(m);
    std::set<int> a(t[0].begin(), t[0].end()), b(t[1].begin(), t[1].end());
    EXPECT_EQ(a.size(), 24u);
    EXPECT_EQ(b.size(), 24u);
    std::vector<int> shared;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(shared));
    EXPECT_EQ(shared.size(), 12u);
}

TEST(ElementDofTable, GatherScatterAreTransposes) {
    const GridMesh m(2, 2, 2);
    const ElementDofTable t = build_dof_table(m);
    const Vector U = Vector::LinSpaced(m.ndof(), 1.0, 2.0);
    ElementVector v;
    for (int c = 0; c < 24; ++c)
        v[c] = 0.1 * c - 1.0;
    Vector acc = Vector::Zero(m.ndof());
    t.scatter_add(acc, 5, v);
    EXPECT_NEAR(t.gather(U, 5).dot(v), U.dot(acc), 1e-13);
}

TEST(Constitutive, NuZeroIsDiagonal) {
    const Matrix6 D = constitutive_matrix(0.0);
    Matrix6 expected = Matrix6::Zero();
    expected.diagonal() << 1, 1, 1, 0.5, 0.5, 0.5;
    EXPECT_EQ(D, expected);
}

TEST(Constitutive, HandValuesAtNu03) {
    const Matrix6 D = constitutive_matrix(0.3);
    EXPECT_NEAR(D(0, 0), 0.7 / 0.52, 1e-14);
    EXPECT_NEAR(D(0, 1), 0.3 / 0.52, 1e-14);
    EXPECT_NEAR(D(3, 3), 0.2 / 0.52, 1e-14);
    EXPECT_TRUE((D - oracle::elasticity(0.3)).cwiseAbs().maxCoeff() < 1e-14);
    Eigen::SelfAdjointEigenSolver<Matrix6> es(D);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
    EXPECT_THROW(constitutive_matrix(0.5), DomainError);
}

class StiffnessByNu : public ::testing::TestWithParam<double> {};

TEST_P(StiffnessByNu, MatchesGaussQuadrature) {
    const double nu = GetParam();
    const Matrix24 KE = element_stiffness(nu);
    const Eigen::MatrixXd ref = oracle::gauss_stiffness(nu);
    EXPECT_LT((KE - ref).cwiseAbs().maxCoeff(), 1e-14);
}

TEST_P(StiffnessByNu, SymmetricPsdRank18) {
    const Matrix24 KE = element_stiffness(GetParam());
    EXPECT_EQ(KE, KE.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix24> es(KE);
    const auto ev = es.eigenvalues();
    const double tol = 1e-12 * ev.maxCoeff();
    int rank = 0;
    for (int i = 0; i < 24; ++i) {
        EXPECT_GT(ev[i], -tol);
        if (ev[i] > tol)
            ++rank;
    }
    EXPECT_EQ(rank, 18);
}

INSTANTIATE_TEST_SUITE_P(PoissonRatios, StiffnessByNu, ::testing::Values(0.0, 0.3, 0.45));

TEST(Stiffness, FirstDiagonalEntry) {
    EXPECT_NEAR(element_stiffness(0.3)(0, 0), (32.0 - 48.0 * 0.3) / 144.0 / 0.52, 1e-15);
    EXPECT_THROW(element_stiffness(0.5), DomainError);
}

TEST(StrainDisplacement, TableHoldsTheThreeConstants) {
    const Matrix6x24 B = strain_displacement_matrix();
    std::set<double> magnitudes;
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 24; ++c)
            if (B(r, c) != 0.0)
                magnitudes.insert(std::abs(B(r, c)));
    EXPECT_EQ(magnitudes, (std::set<double>{0.044658, 0.16667, 0.62201}));
    EXPECT_EQ(B(0, 0), -0.044658);
    EXPECT_EQ(B(4, 7), -0.62201);
    EXPECT_EQ(B(0, 6), 0.16667);
}

TEST(StrainDisplacement, TableAgreesWithShapeFunctions) {
    const double g = 0.5 * (1.0 + 1.0 / std::sqrt(3.0));
    const Eigen::MatrixXd ref = oracle::strain_matrix(g, g, g);
    EXPECT_LT((strain_displacement_matrix() - ref).cwiseAbs().maxCoeff(), 1e-5);
    EXPECT_LT((strain_displacement_at(g, g, g) - ref).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(StrainDisplacement, RigidTranslationsGiveZeroStrain) {
    for (int dir = 0; dir < 3; ++dir) {
        ElementVector u = ElementVector::Zero();
        for (int a = 0; a < 8; ++a)
            u[3 * a + dir] = 1.0;
        EXPECT_LT((strain_displacement_matrix() * u).cwiseAbs().maxCoeff(), 1e-15) << "direction " << dir;
        EXPECT_LT((strain_displacement_at(0.3, 0.6, 0.9) * u).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(Interpolation, SimpModulus) {
    const ElasticityModel m;
    EXPECT_EQ(simp_modulus(1.0, m), 1.0);
    EXPECT_EQ(simp_modulus(0.0, m), 1e-9);
    EXPECT_NEAR(simp_modulus(0.5, m), 1e-9 + 0.125 * (1 - 1e-9), 1e-16);
    EXPECT_THROW(simp_modulus(1.5, m), DomainError);
    EXPECT_THROW(simp_modulus(-0.1, m), DomainError);
}

TEST(Interpolation, StressPenalty) {
    EXPECT_EQ(stress_penalty(1.0, 0.5), 1.0);
    EXPECT_EQ(stress_penalty(1.0, 2.0), 1.0);
    EXPECT_EQ(stress_penalty(0.0, 0.5), 0.0);
    EXPECT_EQ(stress_penalty(0.25, 0.5), 0.5);
}
