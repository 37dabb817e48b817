#pragma once

#include "stresstopo/errors.hpp"
#include "stresstopo/mesh.hpp"

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <vector>

namespace stresstopo {

/// Linear density filter with cone weights H_ij = max(0, r - |c_i - c_j|).
struct DensityFilter {
    Eigen::SparseMatrix<double, Eigen::RowMajor, int> H;
    Vector Hs;
    double radius = 0.0;

    int size() const noexcept { return static_cast<int>(Hs.size()); }
};

inline DensityFilter build_filter(const GridMesh &mesh, double r) {
    if (!(r > 0.0) || !std::isfinite(r))
        throw DomainError("build_filter: radius must be positive and finite");
    const int nelx = mesh.nelx(), nely = mesh.nely(), nelz = mesh.nelz();
    const int reach = static_cast<int>(std::ceil(r)) - 1;

    std::vector<Eigen::Triplet<double, int>> trip;
    const std::size_t span = static_cast<std::size_t>(2 * reach + 1);
    trip.reserve(static_cast<std::size_t>(mesh.nele()) * span * span * std::min<std::size_t>(span, nelz));

    for (int k = 0; k < nelz; ++k)
        for (int i = 0; i < nelx; ++i)
            for (int j = 0; j < nely; ++j) {
                const int e = mesh.element_index(i, j, k);
                for (int k2 = std::max(k - reach, 0); k2 <= std::min(k + reach, nelz - 1); ++k2)
                    for (int i2 = std::max(i - reach, 0); i2 <= std::min(i + reach, nelx - 1); ++i2)
                        for (int j2 = std::max(j - reach, 0); j2 <= std::min(j + reach, nely - 1); ++j2) {
                            const double d = std::sqrt(double((i - i2) * (i - i2) + (j - j2) * (j - j2) +
                                                              (k - k2) * (k - k2)));
                            const double w = r - d;
                            if (w > 0.0)
                                trip.emplace_back(e, mesh.element_index(i2, j2, k2), w);
                        }
            }

    DensityFilter f;
    f.radius = r;
    f.H.resize(mesh.nele(), mesh.nele());
    f.H.setFromTriplets(trip.begin(), trip.end());
    f.H.makeCompressed();
    f.Hs = f.H * Vector::Ones(mesh.nele());
    return f;
}

/// x_tilde = (H x) ./ Hs, accumulated as x_i + sum_j H_ij (x_j - x_i) / Hs_i
/// so that a uniform field comes back bit for bit.
inline Vector filter_density(const DensityFilter &f, const Vector &x) {
    if (x.size() != f.size())
        throw StructuralError("filter_density: size mismatch");
    Vector xt(x.size());
    for (int i = 0; i < f.H.outerSize(); ++i) {
        double acc = 0.0;
        for (Eigen::SparseMatrix<double, Eigen::RowMajor, int>::InnerIterator it(f.H, i); it; ++it)
            acc += it.value() * (x[it.col()] - x[i]);
        xt[i] = x[i] + acc / f.Hs[i];
    }
    return xt;
}

enum class FilterChainRule {
    Exact,        ///< H^T (g ./ Hs), the transpose of filter_density
    RowNormalized, ///< (H g) ./ Hs
};

/// Maps d/dx_tilde to d/dx through the filter.
inline Vector filter_sensitivity(const DensityFilter &f, const Vector &g,
                                 FilterChainRule rule = FilterChainRule::Exact) {
    if (g.size() != f.size())
        throw StructuralError("filter_sensitivity: size mismatch");
    if (rule == FilterChainRule::RowNormalized)
        return (f.H * g).cwiseQuotient(f.Hs);
    return f.H.transpose() * g.cwiseQuotient(f.Hs);
}

} // namespace stresstopo
