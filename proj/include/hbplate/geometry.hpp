#pragma once

/**
 * @file geometry.hpp
 * @brief Geometry maps from the parametric unit square to the physical plate
 * and the chain rule for first and second derivatives.
 *
 * Convention: with J = dS/dxi and H^k the parametric Hessian of the k-th
 * component of S,
 *   grad_phys = J^{-T} grad_par,
 *   H_phys    = J^{-T} (H_par - sum_k grad_phys_k H^k) J^{-1}.
 */

#include "hbplate/errors.hpp"
#include "hbplate/spline_core.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <utility>
#include <vector>

namespace hbplate {

struct GeometryPoint {
    Eigen::Vector2d x;
    Eigen::Matrix2d jacobian;
    std::array<Eigen::Matrix2d, 2> hessian;  ///< second derivatives of each physical component
};

class GeometryMap {
public:
    enum class Kind { identity, affine, spline };

    static GeometryMap identity() { return GeometryMap(Kind::identity); }

    /// x = A xi + b with det A > 0.
    static GeometryMap affine(const Eigen::Matrix2d& A, const Eigen::Vector2d& b)
    {
        if (!(A.determinant() > 0.0)) throw GeometryError("affine map must have positive determinant");
        GeometryMap g(Kind::affine);
        g.A_ = A;
        g.b_ = b;
        return g;
    }

    /// Tensor spline map; control_points[j * nx + i] belongs to b_i(xi) b_j(eta).
    static GeometryMap spline(KnotVector kx, KnotVector ky, std::vector<Eigen::Vector2d> control_points)
    {
        if (kx.front() != 0.0 || kx.back() != 1.0 || ky.front() != 0.0 || ky.back() != 1.0)
            throw GeometryError("spline map must be parametrized over the unit square");
        if (control_points.size() != static_cast<std::size_t>(kx.num_functions() * ky.num_functions()))
            throw GeometryError("spline map: control point count does not match the basis");
        GeometryMap g(Kind::spline);
        g.kx_ = std::move(kx);
        g.ky_ = std::move(ky);
        g.cp_ = std::move(control_points);
        return g;
    }

    [[nodiscard]] Kind kind() const noexcept { return kind_; }
    [[nodiscard]] bool is_identity() const noexcept { return kind_ == Kind::identity; }

    /// Identity or affine with a diagonal matrix.
    [[nodiscard]] bool is_axis_aligned_affine() const noexcept
    {
        return kind_ == Kind::identity || (kind_ == Kind::affine && A_(0, 1) == 0.0 && A_(1, 0) == 0.0);
    }

    /// Constant Jacobian of an affine or identity map.
    [[nodiscard]] Eigen::Matrix2d linear_part() const
    {
        if (kind_ == Kind::spline) throw GeometryError("linear_part: spline map has no constant Jacobian");
        return kind_ == Kind::identity ? Eigen::Matrix2d::Identity().eval() : A_;
    }

    [[nodiscard]] GeometryPoint evaluate(double xi, double eta) const
    {
        GeometryPoint gp;
        gp.hessian = {Eigen::Matrix2d::Zero(), Eigen::Matrix2d::Zero()};
        switch (kind_) {
        case Kind::identity:
            gp.x = {xi, eta};
            gp.jacobian.setIdentity();
            break;
        case Kind::affine:
            gp.x = A_ * Eigen::Vector2d(xi, eta) + b_;
            gp.jacobian = A_;
            break;
        case Kind::spline: {
            const TensorEval t = tensor_eval(kx_, ky_, xi, eta);
            gp.x.setZero();
            gp.jacobian.setZero();
            const int nx = kx_.num_functions();
            for (int jj = 0; jj < t.ny; ++jj) {
                for (int ii = 0; ii < t.nx; ++ii) {
                    const auto a = static_cast<std::size_t>(jj * t.nx + ii);
                    const Eigen::Vector2d& P = cp_[(t.first_j + jj) * nx + t.first_i + ii];
                    gp.x += t.value[a] * P;
                    gp.jacobian.col(0) += t.dx[a] * P;
                    gp.jacobian.col(1) += t.dy[a] * P;
                    for (int k = 0; k < 2; ++k) {
                        gp.hessian[k](0, 0) += t.dxx[a] * P[k];
                        gp.hessian[k](0, 1) += t.dxy[a] * P[k];
                        gp.hessian[k](1, 0) += t.dxy[a] * P[k];
                        gp.hessian[k](1, 1) += t.dyy[a] * P[k];
                    }
                }
            }
            break;
        }
        }
        return gp;
    }

    /// Parametric preimage of a physical point (Newton iteration for spline maps).
    [[nodiscard]] Eigen::Vector2d inverse(const Eigen::Vector2d& x) const
    {
        constexpr double tol = 1e-12;
        Eigen::Vector2d xi = Eigen::Vector2d::Zero();
        switch (kind_) {
        case Kind::identity: xi = x; break;
        case Kind::affine: xi = A_.partialPivLu().solve(x - b_); break;
        case Kind::spline: {
            xi = {0.5, 0.5};
            bool converged = false;
            for (int it = 0; it < 100 && !converged; ++it) {
                const GeometryPoint gp = evaluate(xi[0], xi[1]);
                const Eigen::Vector2d step = gp.jacobian.partialPivLu().solve(x - gp.x);
                xi += step;
                xi = xi.cwiseMax(0.0).cwiseMin(1.0);
                converged = step.norm() < 1e-15 || (evaluate(xi[0], xi[1]).x - x).norm() < 1e-14;
            }
            if ((evaluate(xi[0], xi[1]).x - x).norm() > 1e-10)
                throw OutOfDomainError("inverse: point is outside the physical domain");
            break;
        }
        }
        if (xi[0] < -tol || xi[0] > 1.0 + tol || xi[1] < -tol || xi[1] > 1.0 + tol)
            throw OutOfDomainError("inverse: point is outside the physical domain");
        return xi.cwiseMax(0.0).cwiseMin(1.0);
    }

private:
    explicit GeometryMap(Kind k) : kind_(k) {}

    Kind kind_;
    Eigen::Matrix2d A_ = Eigen::Matrix2d::Identity();
    Eigen::Vector2d b_ = Eigen::Vector2d::Zero();
    KnotVector kx_;
    KnotVector ky_;
    std::vector<Eigen::Vector2d> cp_;
};

/// Chain-rule transform at one parametric point.
struct Pushforward {
    bool identity = true;
    double det = 1.0;
    Eigen::Matrix2d jacobian = Eigen::Matrix2d::Identity();
    Eigen::Matrix2d jinv = Eigen::Matrix2d::Identity();
    std::array<Eigen::Matrix2d, 2> geo_hessian{Eigen::Matrix2d::Zero(), Eigen::Matrix2d::Zero()};

    [[nodiscard]] Eigen::Vector2d gradient(const Eigen::Vector2d& grad_par) const
    {
        return identity ? grad_par : (jinv.transpose() * grad_par).eval();
    }

    [[nodiscard]] std::pair<Eigen::Vector2d, Eigen::Matrix2d> apply(const Eigen::Vector2d& grad_par,
                                                                     const Eigen::Matrix2d& hess_par) const
    {
        if (identity) return {grad_par, hess_par};
        const Eigen::Vector2d g = jinv.transpose() * grad_par;
        const Eigen::Matrix2d corrected = hess_par - g[0] * geo_hessian[0] - g[1] * geo_hessian[1];
        return {g, jinv.transpose() * corrected * jinv};
    }
};

inline Pushforward pushforward2(const GeometryMap& geo, double xi, double eta)
{
    Pushforward pf;
    if (geo.is_identity()) return pf;
    const GeometryPoint gp = geo.evaluate(xi, eta);
    pf.identity = false;
    pf.det = gp.jacobian.determinant();
    if (!(pf.det > 0.0) || !std::isfinite(pf.det))
        throw GeometryError("pushforward2: singular or inverted Jacobian");
    pf.jacobian = gp.jacobian;
    pf.jinv = gp.jacobian.inverse();
    pf.geo_hessian = gp.hessian;
    return pf;
}

} // namespace hbplate
