#pragma once

#include "hbplate/errors.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace hbplate {

/// Gauss-Legendre nodes and weights on [0,1].
struct GaussRule1D {
    std::vector<double> points;
    std::vector<double> weights;
};

inline GaussRule1D gauss_legendre(int n)
{
    if (n < 1) throw std::invalid_argument("gauss_legendre: need at least one point");
    GaussRule1D rule;
    rule.points.resize(n);
    rule.weights.resize(n);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0;
            double p1 = 0.0;
            for (int k = 1; k <= n; ++k) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
            }
            dp = n * (z * p0 - p1) / (z * z - 1.0);
            const double dz = p0 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        // recompute derivative at the converged node
        double p0 = 1.0;
        double p1 = 0.0;
        for (int k = 1; k <= n; ++k) {
            const double p2 = p1;
            p1 = p0;
            p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
        }
        dp = n * (z * p0 - p1) / (z * z - 1.0);
        const double w = 2.0 / ((1.0 - z * z) * dp * dp);
        rule.points[i] = 0.5 * (1.0 - z);
        rule.points[n - 1 - i] = 0.5 * (1.0 + z);
        rule.weights[i] = 0.5 * w;
        rule.weights[n - 1 - i] = 0.5 * w;
    }
    return rule;
}

/// Tensor Gauss rule on the unit reference square; point k = (points[k % n], points[k / n]).
struct QuadratureRule {
    GaussRule1D line;

    [[nodiscard]] int points_per_direction() const noexcept { return static_cast<int>(line.points.size()); }
    [[nodiscard]] int size() const noexcept { return points_per_direction() * points_per_direction(); }
};

/// The single rule used for stiffness, load, norms and bubble blocks: p+2
/// points per direction, exact up to degree 2p+3.
inline QuadratureRule quadrature(int p)
{
    if (p < 3) throw UnsupportedDegreeError("quadrature: degree must be >= 3");
    return QuadratureRule{gauss_legendre(p + 2)};
}

/**
 * Composite copy of `base` on [0,1] with `layers` geometrically shrinking
 * cells (ratio `ratio`) toward each flagged end. Integrates endpoint
 * singularities of the form t^s, s > -1, far better than `base` alone.
 */
inline GaussRule1D graded_rule(const GaussRule1D& base, bool toward_lo, bool toward_hi, int layers,
                               double ratio = 0.3)
{
    if (layers < 0 || !(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("graded_rule: bad grading");
    if (layers == 0 || (!toward_lo && !toward_hi)) return base;
    // breakpoints on [0, half] graded toward 0, half = 1 or 1/2
    const double half = toward_lo && toward_hi ? 0.5 : 1.0;
    std::vector<double> cuts{0.0};
    for (int k = layers; k >= 1; --k) cuts.push_back(half * std::pow(ratio, k));
    cuts.push_back(half);
    std::vector<double> breaks;
    if (toward_lo) breaks = cuts;
    if (toward_hi) {
        if (breaks.empty()) breaks.push_back(0.0);
        const double off = toward_lo ? 0.5 : 0.0;
        for (auto it = cuts.rbegin() + 1; it != cuts.rend(); ++it) breaks.push_back(off + half - *it);
    }
    GaussRule1D out;
    for (std::size_t c = 0; c + 1 < breaks.size(); ++c) {
        const double a = breaks[c];
        const double h = breaks[c + 1] - a;
        for (std::size_t q = 0; q < base.points.size(); ++q) {
            out.points.push_back(a + h * base.points[q]);
            out.weights.push_back(h * base.weights[q]);
        }
    }
    return out;
}

} // namespace hbplate
