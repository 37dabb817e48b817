#pragma once

#include "stresstopo/element.hpp"
#include "stresstopo/errors.hpp"
#include "stresstopo/mesh.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

namespace stresstopo {

using StressMatrix = Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor>;

struct StressParams {
    double q = 0.5; ///< stress relaxation exponent, eta(x) = x^q
    double p = 10;  ///< p-norm aggregation exponent

    /// Above this the aggregated problem tends to oscillate; accepted with a warning.
    static constexpr double kIllConditionedP = 30.0;

    void validate() const {
        if (!(q >= 0.0))
            throw DomainError("stress relaxation exponent q must be >= 0, got " + std::to_string(q));
        if (!(p >= 1.0))
            throw DomainError("p-norm exponent p must be >= 1, got " + std::to_string(p));
    }
    bool ill_conditioned() const noexcept { return p > kIllConditionedP; }
};

/// Relaxed element stresses (Voigt order xx, yy, zz, xy, yz, zx), their von
/// Mises values and the p-norm aggregate.
struct StressField {
    StressMatrix S;
    Vector mises;
    double pnorm = 0.0;

    int size() const noexcept { return static_cast<int>(mises.size()); }
    double max_mises() const { return mises.size() ? mises.maxCoeff() : 0.0; }
};

/// sqrt(0.5((s1-s2)^2 + (s1-s3)^2 + (s2-s3)^2) + 3(s4^2 + s5^2 + s6^2))
template <typename Derived> double von_mises(const Eigen::MatrixBase<Derived> &s) {
    const double a = s[0] - s[1], b = s[0] - s[2], c = s[1] - s[2];
    return std::sqrt(0.5 * (a * a + b * b + c * c) + 3.0 * (s[3] * s[3] + s[4] * s[4] + s[5] * s[5]));
}

/// The same invariant written out as sx^2 + sy^2 + sz^2 - sx sy - sy sz - sz sx + 3(...).
template <typename Derived> double von_mises_expanded(const Eigen::MatrixBase<Derived> &s) {
    const double v = s[0] * s[0] + s[1] * s[1] + s[2] * s[2] - s[0] * s[1] - s[1] * s[2] - s[2] * s[0] +
                     3.0 * (s[3] * s[3] + s[4] * s[4] + s[5] * s[5]);
    return std::sqrt(std::max(v, 0.0));
}

/// (sum_i m_i^p)^(1/p), evaluated as m_max (sum_i (m_i/m_max)^p)^(1/p) so that
/// large p cannot overflow.
inline double pnorm_stress(const Vector &mises, double p) {
    if (!(p >= 1.0))
        throw DomainError("pnorm_stress: p must be >= 1");
    if (mises.size() == 0)
        return 0.0;
    const double m = mises.maxCoeff();
    if (!(m > 0.0))
        return 0.0;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < mises.size(); ++i)
        sum += std::pow(mises[i] / m, p);
    return m * std::pow(sum, 1.0 / p);
}

/// sigma_i = x_i^q D0 B u_i for every element, plus von Mises and p-norm.
inline StressField element_stresses(const Vector &U, const Vector &x, const StressParams &params,
                                    const ElementMatrices &em, const ElementDofTable &table) {
    if (x.size() != table.rows())
        throw StructuralError("element_stresses: density has " + std::to_string(x.size()) + " entries, table has " +
                              std::to_string(table.rows()) + " elements");
    if (U.size() != table.ndof())
        throw StructuralError("element_stresses: displacement has " + std::to_string(U.size()) +
                              " entries, expected " + std::to_string(table.ndof()));
    const int nele = table.rows();
    StressField field;
    field.S.resize(nele, 6);
    field.mises.resize(nele);
    for (int e = 0; e < nele; ++e) {
        const Vector6 s = stress_penalty(x[e], params.q) * (em.DB * table.gather(U, e));
        field.S.row(e) = s.transpose();
        field.mises[e] = von_mises(s);
    }
    field.pnorm = pnorm_stress(field.mises, params.p);
    return field;
}

} // namespace stresstopo
