#pragma once

// The cantilever and L-bracket test problems.

#include "stresstopo/assembly.hpp"
#include "stresstopo/element.hpp"
#include "stresstopo/errors.hpp"
#include "stresstopo/mesh.hpp"
#include "stresstopo/stress.hpp"

#include <algorithm>
#include <iterator>
#include <string>
#include <vector>

namespace stresstopo {

struct ProblemDefinition {
    std::string name;
    int nelx = 0, nely = 0, nelz = 0;
    std::vector<int> load_dofs;     ///< 0-based, sorted
    std::vector<double> load_values;
    std::vector<int> fixed_dofs;    ///< 0-based, sorted, unique
    std::vector<char> passive;      ///< one flag per element
    double volfrac = 0.3;
    ElasticityModel model;
    StressParams stress;
    double radius = 2.5;
    SolverConfig solver;
    int iterations = 100;
    double move = 0.1;

    GridMesh mesh() const { return GridMesh(nelx, nely, nelz); }

    int passive_count() const { return static_cast<int>(std::count(passive.begin(), passive.end(), 1)); }

    BoundaryConditions boundary_conditions() const {
        BoundaryConditions bc;
        bc.fixed_dofs = fixed_dofs;
        bc.load = Vector::Zero(mesh().ndof());
        for (std::size_t n = 0; n < load_dofs.size(); ++n)
            bc.load[load_dofs[n]] += load_values[n];
        return bc;
    }

    /// Loaded DOFs that are also fixed (their load never reaches the structure).
    std::vector<int> loaded_and_fixed() const {
        std::vector<int> both;
        std::set_intersection(load_dofs.begin(), load_dofs.end(), fixed_dofs.begin(), fixed_dofs.end(),
                              std::back_inserter(both));
        return both;
    }

    /// x = volfrac on design elements, kDensityFloor on passive ones.
    Vector initial_density() const {
        Vector x = Vector::Constant(nelx * nely * nelz, volfrac);
        for (std::size_t e = 0; e < passive.size(); ++e)
            if (passive[e])
                x[static_cast<Eigen::Index>(e)] = kDensityFloor;
        return x;
    }

    void validate() const {
        const GridMesh m = mesh();
        if (load_dofs.empty() || fixed_dofs.empty())
            throw StructuralError(name + ": load and support sets must be non-empty");
        if (load_values.size() != load_dofs.size())
            throw StructuralError(name + ": one load value per loaded DOF is required");
        for (int d : load_dofs)
            if (d < 0 || d >= m.ndof())
                throw BoundsError(name + ": load DOF " + std::to_string(d) + " outside the mesh");
        for (int d : fixed_dofs)
            if (d < 0 || d >= m.ndof())
                throw BoundsError(name + ": fixed DOF " + std::to_string(d) + " outside the mesh");
        if (static_cast<int>(passive.size()) != m.nele())
            throw StructuralError(name + ": passive mask has the wrong length");
        if (!(volfrac > 0.0 && volfrac <= 1.0))
            throw DomainError(name + ": volfrac must lie in (0, 1]");
        if (!(radius > 0.0))
            throw DomainError(name + ": filter radius must be positive");
        if (iterations < 0)
            throw DomainError(name + ": iteration budget must be >= 0");
        model.validate();
        stress.validate();
        solver.validate();
    }
};

namespace detail {

inline void sort_unique(std::vector<int> &v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
}

inline std::vector<int> node_dofs(const std::vector<int> &node_ids) {
    std::vector<int> dofs;
    dofs.reserve(3 * node_ids.size());
    for (int n : node_ids)
        for (int d = 0; d < 3; ++d)
            dofs.push_back(3 * (n - 1) + d);
    sort_unique(dofs);
    return dofs;
}

} // namespace detail

/// Left face clamped, -1 in y on every node of the bottom-right edge.
inline ProblemDefinition cantilever(int nelx, int nely, int nelz) {
    const GridMesh mesh(nelx, nely, nelz);
    ProblemDefinition p;
    p.name = "cantilever";
    p.nelx = nelx;
    p.nely = nely;
    p.nelz = nelz;

    for (int k = 0; k <= nelz; ++k)
        p.load_dofs.push_back(mesh.dof(nelx, 0, k, 1));
    detail::sort_unique(p.load_dofs);
    p.load_values.assign(p.load_dofs.size(), -1.0);

    std::vector<int> clamped;
    for (int k = 0; k <= nelz; ++k)
        for (int j = 0; j <= nely; ++j)
            clamped.push_back(mesh.node_id(0, j, k));
    p.fixed_dofs = detail::node_dofs(clamped);

    p.passive.assign(static_cast<std::size_t>(mesh.nele()), 0);
    p.iterations = 100;
    p.validate();
    return p;
}

/// L-shaped domain cut from an n x n square: the upper-right block is passive,
/// the top of the remaining vertical leg is clamped and a downward load acts
/// at the right end of the horizontal leg, just below the re-entrant corner.
///
/// Element ranges follow the density mask x(1:nelx/2, nely/2:end, :) on the
/// (row-from-top, column, layer) array: element rows 1..nelx/2 from the top
/// and columns nely/2..nelx (1-based).  The loaded nodes sit on the right edge
/// at heights nely/2, nely/2 - 1, nely/2 - 2.
inline ProblemDefinition lbracket_3d(int nelx, int nely, int nelz) {
    if (nelx != nely)
        throw DomainError("lbracket: nelx must equal nely (got " + std::to_string(nelx) + " and " +
                          std::to_string(nely) + ")");
    if (nelx % 2 != 0 || nelx < 4)
        throw DomainError("lbracket: nelx must be even and >= 4 (got " + std::to_string(nelx) + ")");
    const GridMesh mesh(nelx, nely, nelz);
    const int half = nelx / 2;

    ProblemDefinition p;
    p.name = nelz == 1 ? "lbracket2d" : "lbracket3d";
    p.nelx = nelx;
    p.nely = nely;
    p.nelz = nelz;

    p.passive.assign(static_cast<std::size_t>(mesh.nele()), 0);
    for (int k = 0; k < nelz; ++k)
        for (int row = 1; row <= half; ++row)
            for (int col = half; col <= nelx; ++col) {
                const int i = col - 1;
                const int j = nely - row;
                p.passive[static_cast<std::size_t>(mesh.element_index(i, j, k))] = 1;
            }

    // loaded nodes: right edge, heights half, half-1, half-2, every layer
    for (int k = 0; k <= nelz; ++k)
        for (int j = half - 2; j <= half; ++j)
            p.load_dofs.push_back(mesh.dof(nelx, j, k, 1));
    detail::sort_unique(p.load_dofs);
    p.load_values.assign(p.load_dofs.size(), -1.0);

    // clamped nodes: top face of the vertical leg, x = 0 .. half, every layer
    std::vector<int> clamped;
    for (int k = 0; k <= nelz; ++k)
        for (int i = 0; i <= half; ++i)
            clamped.push_back(mesh.node_id(i, nely, k));
    p.fixed_dofs = detail::node_dofs(clamped);

    // the loaded nodes must lie at the right end of the solid horizontal leg,
    // the highest one touching the bottom face of the cut-out
    for (int d : p.load_dofs) {
        const int node = d / 3;
        const int layer = node / ((nelx + 1) * (nely + 1));
        const int in_layer = node % ((nelx + 1) * (nely + 1));
        const int i = in_layer / (nely + 1);
        const int j = nely - in_layer % (nely + 1);
        const int kk = std::min(layer, nelz - 1);
        const bool below_is_solid = j > 0 && !p.passive[static_cast<std::size_t>(mesh.element_index(i - 1, j - 1, kk))];
        if (i != nelx || j > half || !(below_is_solid || j == 0))
            throw StructuralError("lbracket: load node (" + std::to_string(i) + "," + std::to_string(j) +
                                  ") is not on the loaded edge of the horizontal leg");
    }
    if (!p.passive[static_cast<std::size_t>(mesh.element_index(nelx - 1, half, 0))] ||
        p.passive[static_cast<std::size_t>(mesh.element_index(nelx - 1, half - 1, 0))])
        throw StructuralError("lbracket: load does not sit below the cut-out corner");

    p.iterations = nelz == 1 ? 120 : 60;
    p.solver.method = nelz > 1 ? SolverMethod::Pcg : SolverMethod::Direct;
    p.validate();
    return p;
}

inline ProblemDefinition lbracket_2d(int n) {
    if (n % 2 != 0)
        throw DomainError("lbracket_2d: n must be even (got " + std::to_string(n) + ")");
    return lbracket_3d(n, n, 1);
}

} // namespace stresstopo
