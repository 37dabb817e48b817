#pragma once

// Regular hexahedral grid with unit elements.
//
// Numbering follows the classic 3D MATLAB topology-optimization codes:
//  - node IDs are 1-based; within an x-column nodes run from the top
//    (j = nely) down to the bottom (j = 0), columns advance along x and
//    layers along z:  id = k*(nelx+1)*(nely+1) + i*(nely+1) + (nely+1-j)
//  - element e (0-based) is stored column-major over (row-from-top, x, z),
//    i.e. the layout of a nely x nelx x nelz MATLAB array.
//  - global DOF indices are 0-based internally: node id n owns DOFs
//    3*(n-1) + {0,1,2} for (ux, uy, uz).

#include "stresstopo/errors.hpp"

#include <Eigen/Core>

#include <array>
#include <string>
#include <vector>

namespace stresstopo {

using Vector = Eigen::VectorXd;
using ElementVector = Eigen::Matrix<double, 24, 1>;

class GridMesh {
  public:
    GridMesh(int nelx, int nely, int nelz) : nelx_(nelx), nely_(nely), nelz_(nelz) {
        if (nelx < 1 || nely < 1 || nelz < 1)
            throw DomainError("GridMesh: element counts must be >= 1 (got " + std::to_string(nelx) + "x" +
                              std::to_string(nely) + "x" + std::to_string(nelz) + ")");
    }

    int nelx() const noexcept { return nelx_; }
    int nely() const noexcept { return nely_; }
    int nelz() const noexcept { return nelz_; }
    int nele() const noexcept { return nelx_ * nely_ * nelz_; }
    int nnode() const noexcept { return (nelx_ + 1) * (nely_ + 1) * (nelz_ + 1); }
    int ndof() const noexcept { return 3 * nnode(); }

    /// 1-based node ID of grid point (i, j, k).
    int node_id(int i, int j, int k) const {
        if (i < 0 || i > nelx_ || j < 0 || j > nely_ || k < 0 || k > nelz_)
            throw BoundsError("node_id: (" + std::to_string(i) + "," + std::to_string(j) + "," + std::to_string(k) +
                              ") outside grid");
        return k * (nelx_ + 1) * (nely_ + 1) + i * (nely_ + 1) + (nely_ + 1 - j);
    }

    /// 0-based global DOF of node (i, j, k) in direction dir (0 = x, 1 = y, 2 = z).
    int dof(int i, int j, int k, int dir) const { return 3 * (node_id(i, j, k) - 1) + dir; }

    /// Element index of the cell whose lower corner is grid point (i, j, k).
    int element_index(int i, int j, int k) const {
        if (i < 0 || i >= nelx_ || j < 0 || j >= nely_ || k < 0 || k >= nelz_)
            throw BoundsError("element_index: (" + std::to_string(i) + "," + std::to_string(j) + "," +
                              std::to_string(k) + ") outside grid");
        return k * nelx_ * nely_ + i * nely_ + (nely_ - 1 - j);
    }

    /// Lower-corner grid coordinates (i, j, k) of element e.
    std::array<int, 3> element_coords(int e) const {
        if (e < 0 || e >= nele())
            throw BoundsError("element_coords: element " + std::to_string(e) + " outside grid");
        const int layer = nelx_ * nely_;
        const int k = e / layer;
        const int rem = e % layer;
        const int i = rem / nely_;
        const int row = rem % nely_;
        return {i, nely_ - 1 - row, k};
    }

    std::array<double, 3> element_center(int e) const {
        const auto [i, j, k] = element_coords(e);
        return {i + 0.5, j + 0.5, k + 0.5};
    }

  private:
    int nelx_;
    int nely_;
    int nelz_;
};

/// Element-to-global-DOF connectivity (one row of 24 DOFs per element).
///
/// Local node order is (0,0,0) (1,0,0) (1,1,0) (0,1,0) (0,0,1) (1,0,1) (1,1,1)
/// (0,1,1) in element-local (x,y,z), three DOFs per node.  This is also the
/// column order of the element stiffness and strain-displacement matrices.
class ElementDofTable {
  public:
    using Row = std::array<int, 24>;

    ElementDofTable() = default;
    explicit ElementDofTable(std::vector<Row> rows, int ndof) : rows_(std::move(rows)), ndof_(ndof) {}

    int rows() const noexcept { return static_cast<int>(rows_.size()); }
    int ndof() const noexcept { return ndof_; }
    const Row &operator[](int e) const { return rows_[static_cast<std::size_t>(e)]; }
    const Row &row(int e) const { return rows_.at(static_cast<std::size_t>(e)); }

    /// u_e = L_e U
    ElementVector gather(const Vector &global, int e) const {
        const Row &r = rows_[static_cast<std::size_t>(e)];
        ElementVector out;
        for (int c = 0; c < 24; ++c)
            out[c] = global[r[c]];
        return out;
    }

    /// global += L_e^T v
    void scatter_add(Vector &global, int e, const ElementVector &v) const {
        const Row &r = rows_[static_cast<std::size_t>(e)];
        for (int c = 0; c < 24; ++c)
            global[r[c]] += v[c];
    }

  private:
    std::vector<Row> rows_;
    int ndof_ = 0;
};

/// Builds the connectivity exactly as the vectorised edofMat construction:
/// the first DOF of each element is that of its (0,0,0) corner and the
/// remaining 23 follow fixed offsets in the global numbering.
inline ElementDofTable build_dof_table(const GridMesh &mesh) {
    const int nelx = mesh.nelx(), nely = mesh.nely(), nelz = mesh.nelz();
    const int layer_nodes = (nelx + 1) * (nely + 1);

    std::array<int, 24> offsets{};
    const std::array<int, 12> face = {0, 1, 2, 3 * nely + 3, 3 * nely + 4, 3 * nely + 5,
                                      3 * nely + 0, 3 * nely + 1, 3 * nely + 2, -3, -2, -1};
    for (int c = 0; c < 12; ++c) {
        offsets[c] = face[c];
        offsets[c + 12] = 3 * layer_nodes + face[c];
    }

    std::vector<ElementDofTable::Row> rows(static_cast<std::size_t>(mesh.nele()));
    std::size_t e = 0;
    for (int k = 0; k < nelz; ++k)
        for (int col = 0; col < nelx; ++col)
            for (int row = 0; row < nely; ++row, ++e) {
                // 1-based ID of the element's top-left node in its front layer
                const int top_left = col * (nely + 1) + row + 1 + k * layer_nodes;
                // 1-based DOF of the node below it, in x; shifted to 0-based
                const int base = 3 * top_left + 1 - 1;
                for (int c = 0; c < 24; ++c)
                    rows[e][static_cast<std::size_t>(c)] = base + offsets[static_cast<std::size_t>(c)];
            }
    return ElementDofTable(std::move(rows), mesh.ndof());
}

} // namespace stresstopo
