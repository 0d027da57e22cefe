#pragma once

/**
 * @file benchmarks.hpp
 * @brief The plate benchmarks on the unit square (D = 1, nu = 0) and a
 * finite-difference check that a manufactured load equals D lap^2 u.
 */

#include "hbplate/geometry.hpp"
#include "hbplate/plate_problem.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace hbplate {

enum class BenchmarkId { smooth, singular, point_load };

inline std::string_view to_string(BenchmarkId id)
{
    switch (id) {
    case BenchmarkId::smooth: return "smooth";
    case BenchmarkId::singular: return "singular";
    case BenchmarkId::point_load: return "point_load";
    }
    return "unknown";
}

inline BenchmarkId parse_benchmark(std::string_view s)
{
    if (s == "smooth") return BenchmarkId::smooth;
    if (s == "singular") return BenchmarkId::singular;
    if (s == "point_load") return BenchmarkId::point_load;
    throw std::invalid_argument("unknown benchmark '" + std::string(s) + "'");
}

struct BenchmarkSpec {
    BenchmarkId id;
    PlateProblem problem;
    GeometryMap geometry = GeometryMap::identity();
    std::optional<ExactSolution> exact;
    Eigen::Vector2d qoi_point{0.5, 0.5};
    std::optional<double> reference_qoi;
};

/// u = sin(2 pi x) sin(2 pi y), simply supported with zero data.
inline BenchmarkSpec benchmark_smooth()
{
    constexpr double k = 2.0 * std::numbers::pi;
    BenchmarkSpec b{BenchmarkId::smooth, {}, GeometryMap::identity(), std::nullopt, {0.5, 0.5}, std::nullopt};
    b.problem.load = [](double x, double y) { return 4.0 * k * k * k * k * std::sin(k * x) * std::sin(k * y); };
    ExactSolution ex;
    ex.value = [](double x, double y) { return std::sin(k * x) * std::sin(k * y); };
    ex.gradient = [](double x, double y) {
        return Eigen::Vector2d(k * std::cos(k * x) * std::sin(k * y), k * std::sin(k * x) * std::cos(k * y));
    };
    ex.hessian = [](double x, double y) {
        const double s = -k * k * std::sin(k * x) * std::sin(k * y);
        const double c = k * k * std::cos(k * x) * std::cos(k * y);
        Eigen::Matrix2d H;
        H << s, c, c, s;
        return H;
    };
    b.exact = std::move(ex);
    return b;
}

/// u = x^a y^b with a = b = 2.8; deflection and bending moment of u prescribed on every side.
inline BenchmarkSpec benchmark_singular(double a = 2.8, double b = 2.8)
{
    BenchmarkSpec s{BenchmarkId::singular, {}, GeometryMap::identity(), std::nullopt, {0.5, 0.5}, std::nullopt};
    auto pw = [](double x, double e) { return x > 0.0 ? std::pow(x, e) : (e == 0.0 ? 1.0 : 0.0); };
    ExactSolution ex;
    ex.value = [=](double x, double y) { return pw(x, a) * pw(y, b); };
    ex.gradient = [=](double x, double y) {
        return Eigen::Vector2d(a * pw(x, a - 1) * pw(y, b), b * pw(x, a) * pw(y, b - 1));
    };
    ex.hessian = [=](double x, double y) {
        Eigen::Matrix2d H;
        const double xy = a * b * pw(x, a - 1) * pw(y, b - 1);
        H << a * (a - 1) * pw(x, a - 2) * pw(y, b), xy, xy, b * (b - 1) * pw(x, a) * pw(y, b - 2);
        return H;
    };
    s.problem.load = [=](double x, double y) {
        return a * (a - 1) * (a - 2) * (a - 3) * pw(x, a - 4) * pw(y, b) +
               2.0 * a * (a - 1) * b * (b - 1) * pw(x, a - 2) * pw(y, b - 2) +
               b * (b - 1) * (b - 2) * (b - 3) * pw(x, a) * pw(y, b - 4);
    };
    for (Side side : all_sides) {
        const bool vertical = side == Side::left || side == Side::right;
        const PlateProblem& pr = s.problem;
        const HessianField H = ex.hessian;
        // bending moment D (nu lap u + (1 - nu) n.(H u) n) with n = +-e_x or +-e_y
        ScalarField moment = [H, vertical, D = pr.D, nu = pr.nu](double x, double y) {
            const Eigen::Matrix2d h = H(x, y);
            const double nn = vertical ? h(0, 0) : h(1, 1);
            return D * (nu * h.trace() + (1.0 - nu) * nn);
        };
        s.problem.side(side) = SideCondition::simply_supported(ex.value, std::move(moment));
    }
    s.exact = std::move(ex);
    return s;
}

/**
 * @brief Centre deflection of the simply supported unit square under a unit
 * downward point load at the centre: -4/(D pi^4) sum_{m,n odd} (m^2+n^2)^-2.
 *
 * The inner sum over n is taken in closed form,
 *   sum_{n odd} (n^2+m^2)^-2 = pi tanh(pi m/2)/(8 m^3) - pi^2 sech^2(pi m/2)/(16 m^2),
 * and the outer sum runs over odd m <= 200001 plus the tail pi/(32 (M+1)^2)
 * of the leading m^-3 term. Truncated double sums converge only like 1/N
 * and stall near 1e-11 relative at any practical N. Computed once.
 */
inline double point_load_reference()
{
    static const double value = [] {
        constexpr double pi = std::numbers::pi;
        constexpr int M = 200001;
        double sum = 0.0, comp = 0.0;  // Neumaier summation
        auto add = [&](double v) {
            const double t = sum + v;
            comp += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
            sum = t;
        };
        // smallest terms first
        for (int m = M; m >= 1; m -= 2) {
            const double x = static_cast<double>(m);
            const double c = std::cosh(0.5 * pi * x);
            add(pi * std::tanh(0.5 * pi * x) / (8.0 * x * x * x) - pi * pi / (16.0 * x * x * c * c));
        }
        const double tail = pi / (32.0 * (M + 1.0) * (M + 1.0));
        return -4.0 / (pi * pi * pi * pi) * (sum + comp + tail);
    }();
    return value;
}

/// Unit point load P = -1 at the centre of the simply supported unit square.
inline BenchmarkSpec benchmark_point_load()
{
    BenchmarkSpec b{BenchmarkId::point_load, {}, GeometryMap::identity(), std::nullopt, {0.5, 0.5}, std::nullopt};
    b.problem.point_loads.push_back({{0.5, 0.5}, -1.0});
    b.reference_qoi = point_load_reference();
    return b;
}

inline BenchmarkSpec make_benchmark(BenchmarkId id)
{
    switch (id) {
    case BenchmarkId::smooth: return benchmark_smooth();
    case BenchmarkId::singular: return benchmark_singular();
    case BenchmarkId::point_load: return benchmark_point_load();
    }
    throw std::invalid_argument("make_benchmark: unknown id");
}

/// D lap^2 f at (x, y) from O(h^4) central differences of f.
inline double bilaplacian_fd(const ScalarField& f, double x, double y, double h)
{
    auto d4 = [&](auto g) {
        return (-g(-3) + 12.0 * g(-2) - 39.0 * g(-1) + 56.0 * g(0) - 39.0 * g(1) + 12.0 * g(2) - g(3)) /
               (6.0 * h * h * h * h);
    };
    auto d2 = [&](auto g) { return (-g(-2) + 16.0 * g(-1) - 30.0 * g(0) + 16.0 * g(1) - g(2)) / (12.0 * h * h); };
    const double fxxxx = d4([&](int i) { return f(x + i * h, y); });
    const double fyyyy = d4([&](int j) { return f(x, y + j * h); });
    const double fxxyy = d2([&](int j) { return d2([&](int i) { return f(x + i * h, y + j * h); }); });
    return fxxxx + 2.0 * fxxyy + fyyyy;
}

struct ConsistencyReport {
    double max_relative_error = 0.0;
    int points = 0;
};

/**
 * @brief Compares the load with D lap^2 u_ex by finite differences at random
 * points of [lo, hi]^2 (away from singular edges). Errors are relative to the
 * largest sampled |g|, so sign changes of the load do not inflate them.
 * Benchmarks without a closed-form solution report zero points.
 */
inline ConsistencyReport check_manufactured_consistency(const BenchmarkSpec& b, int points = 10,
                                                        unsigned seed = 12345, double lo = 0.25, double hi = 0.75,
                                                        double h = 0.01)
{
    ConsistencyReport rep;
    if (!b.exact || !b.problem.load) return rep;
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    double scale = 0.0, worst = 0.0;
    for (int k = 0; k < points; ++k) {
        const double x = u(rng), y = u(rng);
        const double fd = b.problem.D * bilaplacian_fd(b.exact->value, x, y, h);
        const double g = b.problem.load(x, y);
        scale = std::max(scale, std::abs(g));
        worst = std::max(worst, std::abs(fd - g));
        ++rep.points;
    }
    rep.max_relative_error = scale > 0.0 ? worst / scale : worst;
    return rep;
}

} // namespace hbplate
