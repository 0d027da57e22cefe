#pragma once

#include "hbplate/hb_space.hpp"

#include <Eigen/Dense>

#include <array>
#include <functional>
#include <optional>
#include <vector>

namespace hbplate {

using ScalarField = std::function<double(double x, double y)>;
using HessianField = std::function<Eigen::Matrix2d(double x, double y)>;

/// Which of (deflection, effective shear) is prescribed on a side.
enum class DeflectionCondition { prescribed, shear };
/// Which of (rotation, bending moment) is prescribed on a side.
enum class RotationCondition { prescribed, moment };

/**
 * @brief Boundary data on one side of the plate.
 *
 * Every side belongs to exactly one of {deflection, shear} and one of
 * {rotation, moment}. An empty field stands for homogeneous data.
 *   deflection: u = value;          shear:  D(grad lap u + (1-nu) Psi(u)) . d = value
 *   rotation:   -grad u . d = rot;  moment: D(nu lap u + (1-nu) d.(H u)d) = rot
 */
struct SideCondition {
    DeflectionCondition deflection = DeflectionCondition::prescribed;
    RotationCondition rotation = RotationCondition::moment;
    ScalarField value;
    ScalarField rotation_value;

    [[nodiscard]] static SideCondition simply_supported(ScalarField u = {}, ScalarField moment = {})
    {
        return {DeflectionCondition::prescribed, RotationCondition::moment, std::move(u), std::move(moment)};
    }
    [[nodiscard]] static SideCondition clamped(ScalarField u = {}, ScalarField rotation = {})
    {
        return {DeflectionCondition::prescribed, RotationCondition::prescribed, std::move(u), std::move(rotation)};
    }
    [[nodiscard]] static SideCondition free(ScalarField shear = {}, ScalarField moment = {})
    {
        return {DeflectionCondition::shear, RotationCondition::moment, std::move(shear), std::move(moment)};
    }
};

struct PointLoad {
    Eigen::Vector2d location;
    double magnitude = 0.0;
};

/// Kirchhoff plate D lap^2 u = g with boundary data per side of the parametric square.
struct PlateProblem {
    double D = 1.0;
    double nu = 0.0;
    ScalarField load;
    std::array<SideCondition, 4> sides{SideCondition::simply_supported(), SideCondition::simply_supported(),
                                       SideCondition::simply_supported(), SideCondition::simply_supported()};
    std::vector<PointLoad> point_loads;

    [[nodiscard]] const SideCondition& side(Side s) const { return sides[static_cast<int>(s)]; }
    [[nodiscard]] SideCondition& side(Side s) { return sides[static_cast<int>(s)]; }
};

/// Closed-form solution used for error measurement.
struct ExactSolution {
    ScalarField value;
    std::function<Eigen::Vector2d(double x, double y)> gradient;
    HessianField hessian;
};

inline double evaluate_or_zero(const ScalarField& f, double x, double y) { return f ? f(x, y) : 0.0; }

} // namespace hbplate
