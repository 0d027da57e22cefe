#pragma once

/**
 * @file error_estimation.hpp
 * @brief A posteriori error estimation for the plate problem.
 *
 * The bubble estimator solves the residual equation a(e_h, b) = F(b) - a(u_h, b)
 * on element-local tensor Bernstein bubbles of degree p+1. Supports of bubbles
 * from different elements do not overlap, so the system splits into one dense
 * block per element; the indicator is eta = C_a * sqrt(e^T A e).
 *
 * The residual comparator is the classical strong-residual estimator
 *   eta^2 = h^4 |g - D lap^2 u_h|^2_e + 1/2 sum_{interior edges}
 *           ( h_e |[lap u_h]|^2 + h_e^3 |[d_n lap u_h]|^2 ),
 * with point loads replaced by a Gaussian of width h/4.
 */

#include "hbplate/detail/parallel.hpp"
#include "hbplate/errors.hpp"
#include "hbplate/geometry.hpp"
#include "hbplate/hb_space.hpp"
#include "hbplate/plate_assembly.hpp"
#include "hbplate/plate_problem.hpp"
#include "hbplate/quadrature.hpp"
#include "hbplate/spline_core.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace hbplate {

/// Tensor Bernstein index pair of a bubble of degree q on its element.
struct BubbleDescriptor {
    int i = 0;
    int j = 0;
    friend auto operator<=>(const BubbleDescriptor&, const BubbleDescriptor&) = default;
};

struct ElementBubbles {
    ElementId element;
    std::vector<BubbleDescriptor> bubbles;
};

struct BubbleSpace {
    int degree = 0;  ///< q = p + 1
    std::vector<ElementBubbles> elements;
};

/**
 * Per domain side, the Bernstein indices counted from that side (0: nonzero
 * value on the side, 1: zero value, nonzero normal derivative) of the extra
 * bubbles on elements touching it. Empty for sides without natural data.
 */
using BoundaryBubbleIndices = std::array<std::vector<int>, 4>;

/// Boundary bubbles matching the natural conditions of the problem: index 1
/// on moment sides and index 0 on shear sides. Index 0 is left out on
/// deflection sides, where it would violate the essential condition.
inline BoundaryBubbleIndices boundary_bubble_indices(const PlateProblem& pr)
{
    BoundaryBubbleIndices out;
    for (Side s : all_sides) {
        const SideCondition& sc = pr.side(s);
        auto& ix = out[static_cast<int>(s)];
        if (sc.deflection == DeflectionCondition::shear) ix.push_back(0);
        if (sc.rotation == RotationCondition::moment) ix.push_back(1);
    }
    return out;
}

/**
 * @brief Bubbles of degree q = p+1 for every active element: interior pairs
 * (i, j) in {2..q-2}^2, plus on each domain side with boundary indices the
 * pairs with that index in the side's direction and an interior index along it.
 */
inline BubbleSpace build_bubble_space(const HierarchicalMesh& mesh, int p, const BoundaryBubbleIndices& boundary = {})
{
    if (p < 3) throw UnsupportedDegreeError("build_bubble_space: degree " + std::to_string(p) + " unsupported, need p >= 3");
    const int q = p + 1;
    BubbleSpace space;
    space.degree = q;
    for (const ElementId& e : mesh.active_elements()) {
        ElementBubbles eb{e, {}};
        for (int j = 2; j <= q - 2; ++j)
            for (int i = 2; i <= q - 2; ++i) eb.bubbles.push_back({i, j});
        for (Side s : all_sides) {
            if (!on_domain_side(mesh, e, s)) continue;
            for (int k : boundary[static_cast<int>(s)]) {
                if (k < 0 || k > 1) throw std::invalid_argument("build_bubble_space: boundary index must be 0 or 1");
                for (int t = 2; t <= q - 2; ++t) {
                    switch (s) {
                    case Side::left: eb.bubbles.push_back({k, t}); break;
                    case Side::right: eb.bubbles.push_back({q - k, t}); break;
                    case Side::bottom: eb.bubbles.push_back({t, k}); break;
                    case Side::top: eb.bubbles.push_back({t, q - k}); break;
                    }
                }
            }
        }
        space.elements.push_back(std::move(eb));
    }
    return space;
}

struct BubbleBlock {
    ElementId element;
    Eigen::MatrixXd A;
    Eigen::VectorXd r;
    Eigen::VectorXd e;
};

struct ElementEstimate {
    ElementId element;
    double eta = 0.0;
};

struct EffectivityReport {
    double eta_total = 0.0;
    double error = 0.0;
    double theta = 0.0;
};

struct EstimateResult {
    std::vector<ElementEstimate> elements;
    double eta_total = 0.0;
};

struct EstimatorOptions {
    double C_a = 3.0;
    bool parallel = false;
    int load_grading_layers = 0;  ///< as in AssemblyOptions; keep the two equal
};

namespace detail {

/// Bubbles of one element on a tensor grid of parametric points inside its box.
inline PhysicalTable bubble_table(const Box& box, int q, std::span<const BubbleDescriptor> bubbles,
                                  const GeometryMap& geo, std::span<const double> xs, std::span<const double> ys)
{
    const double h = box.x1 - box.x0;
    auto local = [&](std::span<const double> v, double a) {
        std::vector<BasisEval> out;
        out.reserve(v.size());
        for (double x : v) out.push_back(eval_bernstein_ders(q, std::clamp((x - a) / h, 0.0, 1.0), 2));
        return out;
    };
    const auto bx = local(xs, box.x0);
    const auto by = local(ys, box.y0);
    const std::array<double, 3> scale{1.0, 1.0 / h, 1.0 / (h * h)};
    PhysicalTable t;
    fill_physical(t, geo, xs, ys, static_cast<int>(bubbles.size()), [&](int f, int ix, int iy, int dx, int dy) {
        return bx[ix].ders[dx][bubbles[f].i] * by[iy].ders[dy][bubbles[f].j] * scale[dx] * scale[dy];
    });
    return t;
}

/// a(u_h, v) for each function v of table tv, where tu holds the local
/// functions of u_h at the same points and coef their coefficients.
inline Eigen::VectorXd apply_form(const PhysicalTable& tu, std::span<const double> coef, const PhysicalTable& tv,
                                  const PlateProblem& pr)
{
    Eigen::VectorXd out = Eigen::VectorXd::Zero(tv.num_functions);
    for (int q = 0; q < tv.num_points; ++q) {
        double uxx = 0.0, uxy = 0.0, uyy = 0.0;
        for (int f = 0; f < tu.num_functions; ++f) {
            const std::size_t k = tu.at(f, q);
            uxx += coef[f] * tu.hxx[k];
            uxy += coef[f] * tu.hxy[k];
            uyy += coef[f] * tu.hyy[k];
        }
        for (int b = 0; b < tv.num_functions; ++b) {
            const std::size_t k = tv.at(b, q);
            out[b] += tv.weights[q] * bending_density(pr, uxx, uxy, uyy, tv.hxx[k], tv.hxy[k], tv.hyy[k]);
        }
    }
    return out;
}

inline std::vector<double> local_coefficients(const DiscreteField& u, std::span<const LocalFunction> funcs)
{
    std::vector<double> c(funcs.size());
    for (std::size_t f = 0; f < funcs.size(); ++f) c[f] = u.coefficients[funcs[f].dof];
    return c;
}

inline bool contains(const Box& b, const Eigen::Vector2d& x)
{
    return x[0] >= b.x0 && x[0] <= b.x1 && x[1] >= b.y0 && x[1] <= b.y1;
}

inline BubbleBlock assemble_block(const ElementBubbles& eb, int q, const DiscreteField& u, const HierarchicalMesh& mesh,
                                  const HierarchicalBasis& basis, const GeometryMap& geo, const PlateProblem& pr,
                                  const QuadratureRule& rule, std::span<const Eigen::Vector2d> load_params,
                                  int load_grading_layers = 0)
{
    const ElementId& e = eb.element;
    const Box box = mesh.bounds(e);
    const double h = box.x1 - box.x0;
    const auto xs = map_to(box.x0, h, rule.line.points);
    const auto ys = map_to(box.y0, h, rule.line.points);

    PhysicalTable tb = bubble_table(box, q, eb.bubbles, geo, xs, ys);
    const int n = rule.points_per_direction();
    for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix) tb.weights[iy * n + ix] *= rule.line.weights[ix] * rule.line.weights[iy] * h * h;

    const auto funcs = connectivity(mesh, basis, e);
    const PhysicalTable tu = element_quadrature(mesh, funcs, e, geo, rule);
    const auto coef = local_coefficients(u, funcs);

    BubbleBlock blk;
    blk.element = e;
    blk.A = local_stiffness(tb, pr);
    blk.r = -apply_form(tu, coef, tb, pr);
    if (pr.load) {
        const int ncell = mesh.cells_per_side(e.level);
        const auto rx = graded_rule(rule.line, e.i == 0, e.i == ncell - 1, load_grading_layers);
        const auto ry = graded_rule(rule.line, e.j == 0, e.j == ncell - 1, load_grading_layers);
        PhysicalTable tl = bubble_table(box, q, eb.bubbles, geo, map_to(box.x0, h, rx.points), map_to(box.y0, h, ry.points));
        const int nx = static_cast<int>(rx.points.size());
        for (int k = 0; k < tl.num_points; ++k) {
            const double w = tl.weights[k] * rx.weights[k % nx] * ry.weights[k / nx] * h * h;
            const double g = pr.load(tl.points[k][0], tl.points[k][1]) * w;
            for (int b = 0; b < tl.num_functions; ++b) blk.r[b] += g * tl.val[tl.at(b, k)];
        }
    }
    // natural boundary data
    for (Side s : all_sides) {
        if (!on_domain_side(mesh, e, s)) continue;
        const SideCondition& sc = pr.side(s);
        const bool moment = sc.rotation == RotationCondition::moment && sc.rotation_value;
        const bool shear = sc.deflection == DeflectionCondition::shear && sc.value;
        if (!moment && !shear) continue;
        const bool vertical = s == Side::left || s == Side::right;
        const SidePoints sp =
            side_points(box, s, vertical ? box.y0 : box.x0, vertical ? box.y1 : box.x1, geo, rule.line);
        const PhysicalTable ts = bubble_table(box, q, eb.bubbles, geo, sp.xs, sp.ys);
        for (int k = 0; k < ts.num_points; ++k) {
            const Eigen::Vector2d& x = ts.points[k];
            const double M = moment ? sc.rotation_value(x[0], x[1]) : 0.0;
            const double Q = shear ? sc.value(x[0], x[1]) : 0.0;
            for (int b = 0; b < ts.num_functions; ++b) {
                const std::size_t i = ts.at(b, k);
                const double dn = ts.gx[i] * sp.normals[k][0] + ts.gy[i] * sp.normals[k][1];
                blk.r[b] += sp.weights[k] * (M * dn - Q * ts.val[i]);
            }
        }
    }
    // point loads by exact evaluation
    for (std::size_t k = 0; k < pr.point_loads.size(); ++k) {
        const Eigen::Vector2d& xi = load_params[k];
        if (!contains(box, xi)) continue;
        const std::vector<double> px{xi[0]}, py{xi[1]};
        const PhysicalTable tp = bubble_table(box, q, eb.bubbles, geo, px, py);
        for (int b = 0; b < tp.num_functions; ++b) blk.r[b] += pr.point_loads[k].magnitude * tp.val[b];
    }
    return blk;
}

inline std::vector<Eigen::Vector2d> point_load_parameters(const GeometryMap& geo, const PlateProblem& pr)
{
    std::vector<Eigen::Vector2d> out;
    for (const PointLoad& pl : pr.point_loads) out.push_back(point_load_parameter(geo, pl));
    return out;
}

} // namespace detail

/// Element blocks of the bubble residual system, in the order of the space.
inline std::vector<BubbleBlock> assemble_blocks(const BubbleSpace& bubbles, const DiscreteField& u,
                                                const HierarchicalMesh& mesh, const HierarchicalBasis& basis,
                                                const GeometryMap& geo, const PlateProblem& pr, bool parallel = false)
{
    const QuadratureRule rule = quadrature(mesh.degree());
    const auto params = detail::point_load_parameters(geo, pr);
    std::vector<BubbleBlock> blocks(bubbles.elements.size());
    detail::batched_map_reduce<BubbleBlock>(
        bubbles.elements.size(), parallel,
        [&](std::size_t k) {
            return detail::assemble_block(bubbles.elements[k], bubbles.degree, u, mesh, basis, geo, pr, rule, params);
        },
        [&](std::size_t k, BubbleBlock& b) { blocks[k] = std::move(b); });
    return blocks;
}

/// Solves one block by Cholesky with one step of iterative refinement.
inline void solve_block(BubbleBlock& blk)
{
    if (blk.A.rows() == 0) {
        blk.e.resize(0);
        return;
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(blk.A);
    if (llt.info() != Eigen::Success)
        throw SolverError("solve_blocks: bubble block is not positive definite (element level " +
                          std::to_string(blk.element.level) + ", " + std::to_string(blk.element.i) + ", " +
                          std::to_string(blk.element.j) + ")");
    blk.e = llt.solve(blk.r);
    blk.e += llt.solve(blk.r - blk.A * blk.e);
}

inline std::vector<BubbleBlock> solve_blocks(std::vector<BubbleBlock> blocks)
{
    for (BubbleBlock& b : blocks) solve_block(b);
    return blocks;
}

inline std::vector<ElementEstimate> eta_elements(std::span<const BubbleBlock> blocks, double C_a = 3.0)
{
    std::vector<ElementEstimate> out;
    out.reserve(blocks.size());
    for (const BubbleBlock& b : blocks)
        out.push_back({b.element, b.e.size() ? C_a * std::sqrt(std::max(0.0, b.e.dot(b.A * b.e))) : 0.0});
    return out;
}

inline double eta_total(std::span<const ElementEstimate> estimates)
{
    double s = 0.0;
    for (const ElementEstimate& e : estimates) s += e.eta * e.eta;
    return std::sqrt(s);
}

/**
 * @brief Bubble estimator for a solved field. Elements are processed level by
 * level; within a level every block is assembled and solved on its own, so
 * the result does not depend on the processing order. Estimates are returned
 * in the mesh's active-element order.
 */
inline EstimateResult estimate(const DiscreteField& u, const HierarchicalMesh& mesh, const HierarchicalBasis& basis,
                               const GeometryMap& geo, const PlateProblem& pr, const EstimatorOptions& opts = {})
{
    const BubbleSpace all = build_bubble_space(mesh, mesh.degree(), boundary_bubble_indices(pr));
    const QuadratureRule rule = quadrature(mesh.degree());
    const auto params = detail::point_load_parameters(geo, pr);
    EstimateResult res;
    res.elements.reserve(all.elements.size());
    std::size_t begin = 0;
    while (begin < all.elements.size()) {
        const int level = all.elements[begin].element.level;
        std::size_t end = begin;
        while (end < all.elements.size() && all.elements[end].element.level == level) ++end;
        detail::batched_map_reduce<ElementEstimate>(
            end - begin, opts.parallel,
            [&](std::size_t k) {
                BubbleBlock blk = detail::assemble_block(all.elements[begin + k], all.degree, u, mesh, basis, geo, pr,
                                                         rule, params, opts.load_grading_layers);
                solve_block(blk);
                return eta_elements(std::span<const BubbleBlock>(&blk, 1), opts.C_a).front();
            },
            [&](std::size_t, const ElementEstimate& est) { res.elements.push_back(est); });
        begin = end;
    }
    res.eta_total = eta_total(res.elements);
    return res;
}

/// Gaussian of mass P and width sigma centred at x0.
inline double regularized_point_load(const PointLoad& pl, double sigma, const Eigen::Vector2d& x)
{
    const double r2 = (x - pl.location).squaredNorm();
    return pl.magnitude / (2.0 * std::numbers::pi * sigma * sigma) * std::exp(-r2 / (2.0 * sigma * sigma));
}

namespace detail {

/// Physical derivative d^a/dx^a d^b/dy^b of a field on an axis-aligned
/// affine map from parametric derivatives.
struct AxisScaling {
    double sx = 1.0, sy = 1.0;  ///< physical length per parametric unit
    [[nodiscard]] double factor(int a, int b) const { return std::pow(sx, -a) * std::pow(sy, -b); }
};

inline AxisScaling axis_scaling(const GeometryMap& geo)
{
    if (!geo.is_axis_aligned_affine())
        throw GeometryError("residual estimator: only identity and axis-aligned affine maps are supported");
    const Eigen::Matrix2d A = geo.linear_part();
    if (!(A(0, 0) > 0.0 && A(1, 1) > 0.0)) throw GeometryError("residual estimator: map must preserve orientation per axis");
    return {A(0, 0), A(1, 1)};
}

/// lap u and grad lap u of the field at the grid points of an evaluator.
struct LaplaceData {
    std::vector<double> lap, dlap_x, dlap_y, bilap;
};

inline LaplaceData laplace_data(const ElementEvaluator& ev, std::span<const double> coef, const AxisScaling& sc,
                                int max_der)
{
    const int n = ev.nx() * ev.ny();
    LaplaceData d;
    d.lap.assign(n, 0.0);
    d.dlap_x.assign(n, 0.0);
    d.dlap_y.assign(n, 0.0);
    d.bilap.assign(n, 0.0);
    for (int iy = 0; iy < ev.ny(); ++iy)
        for (int ix = 0; ix < ev.nx(); ++ix) {
            const int k = iy * ev.nx() + ix;
            for (int f = 0; f < ev.num_functions(); ++f) {
                const double c = coef[f];
                if (c == 0.0) continue;
                d.lap[k] += c * (ev(f, ix, iy, 2, 0) * sc.factor(2, 0) + ev(f, ix, iy, 0, 2) * sc.factor(0, 2));
                if (max_der >= 3) {
                    d.dlap_x[k] += c * (ev(f, ix, iy, 3, 0) * sc.factor(3, 0) + ev(f, ix, iy, 1, 2) * sc.factor(1, 2));
                    d.dlap_y[k] += c * (ev(f, ix, iy, 2, 1) * sc.factor(2, 1) + ev(f, ix, iy, 0, 3) * sc.factor(0, 3));
                }
                if (max_der >= 4)
                    d.bilap[k] += c * (ev(f, ix, iy, 4, 0) * sc.factor(4, 0) + 2.0 * ev(f, ix, iy, 2, 2) * sc.factor(2, 2) +
                                       ev(f, ix, iy, 0, 4) * sc.factor(0, 4));
            }
        }
    return d;
}

inline Side opposite(Side s)
{
    switch (s) {
    case Side::left: return Side::right;
    case Side::right: return Side::left;
    case Side::bottom: return Side::top;
    case Side::top: return Side::bottom;
    }
    return s;
}

} // namespace detail

/**
 * @brief Classical residual-based indicators (unscaled). Requires an identity
 * or axis-aligned affine geometry; h is the longer physical side of an element.
 */
inline std::vector<ElementEstimate> residual_estimator(const DiscreteField& u, const HierarchicalMesh& mesh,
                                                       const HierarchicalBasis& basis, const GeometryMap& geo,
                                                       const PlateProblem& pr, bool parallel = false)
{
    const detail::AxisScaling sc = detail::axis_scaling(geo);
    const QuadratureRule rule = quadrature(mesh.degree());
    const auto elements = mesh.active_elements();
    auto element_h = [&](const ElementId& e) { return mesh.element_size(e.level) * std::max(sc.sx, sc.sy); };

    std::vector<double> sigma;
    for (const PointLoad& pl : pr.point_loads) {
        const Eigen::Vector2d xi = detail::point_load_parameter(geo, pl);
        sigma.push_back(element_h(mesh.locate(xi[0], xi[1])) / 4.0);
    }

    std::vector<ElementEstimate> out;
    out.reserve(elements.size());
    detail::batched_map_reduce<ElementEstimate>(
        elements.size(), parallel,
        [&](std::size_t idx) {
            const ElementId& e = elements[idx];
            const Box box = mesh.bounds(e);
            const double hp = box.x1 - box.x0;
            const double h = element_h(e);
            const auto funcs = connectivity(mesh, basis, e);
            const auto coef = detail::local_coefficients(u, funcs);

            // interior residual
            const auto xs = detail::map_to(box.x0, hp, rule.line.points);
            const auto ys = detail::map_to(box.y0, hp, rule.line.points);
            const ElementEvaluator ev(mesh, funcs, e, xs, ys, 4);
            const detail::LaplaceData ld = detail::laplace_data(ev, coef, sc, 4);
            const double jac = sc.sx * sc.sy * hp * hp;
            double interior = 0.0;
            for (int iy = 0; iy < ev.ny(); ++iy)
                for (int ix = 0; ix < ev.nx(); ++ix) {
                    const Eigen::Vector2d x = geo.evaluate(xs[ix], ys[iy]).x;
                    double g = evaluate_or_zero(pr.load, x[0], x[1]);
                    for (std::size_t k = 0; k < pr.point_loads.size(); ++k)
                        g += regularized_point_load(pr.point_loads[k], sigma[k], x);
                    const double res = g - pr.D * ld.bilap[iy * ev.nx() + ix];
                    interior += rule.line.weights[ix] * rule.line.weights[iy] * jac * res * res;
                }
            double eta2 = std::pow(h, 4) * interior;

            // jumps across interior edges, split into the segments shared with each neighbour
            for (Side s : all_sides) {
                const bool vertical = s == Side::left || s == Side::right;
                for (const ElementId& nb : mesh.face_neighbors(e, s)) {
                    const Box nbox = mesh.bounds(nb);
                    const double s0 = vertical ? std::max(box.y0, nbox.y0) : std::max(box.x0, nbox.x0);
                    const double s1 = vertical ? std::min(box.y1, nbox.y1) : std::min(box.x1, nbox.x1);
                    const SidePoints sp = side_points(box, s, s0, s1, geo, rule.line);
                    const SidePoints sq = side_points(nbox, detail::opposite(s), s0, s1, geo, rule.line);
                    const auto nfuncs = connectivity(mesh, basis, nb);
                    const auto ncoef = detail::local_coefficients(u, nfuncs);
                    const ElementEvaluator mine(mesh, funcs, e, sp.xs, sp.ys, 3);
                    const ElementEvaluator theirs(mesh, nfuncs, nb, sq.xs, sq.ys, 3);
                    const detail::LaplaceData a = detail::laplace_data(mine, coef, sc, 3);
                    const detail::LaplaceData b = detail::laplace_data(theirs, ncoef, sc, 3);
                    const double he = std::min(h, element_h(nb));
                    double jl = 0.0, jn = 0.0;
                    for (std::size_t k = 0; k < sp.weights.size(); ++k) {
                        const Eigen::Vector2d& n = sp.normals[k];
                        const double dl = a.lap[k] - b.lap[k];
                        const double dn = (a.dlap_x[k] - b.dlap_x[k]) * n[0] + (a.dlap_y[k] - b.dlap_y[k]) * n[1];
                        jl += sp.weights[k] * dl * dl;
                        jn += sp.weights[k] * dn * dn;
                    }
                    eta2 += 0.5 * (he * jl + he * he * he * jn);
                }
            }
            return ElementEstimate{e, std::sqrt(eta2)};
        },
        [&](std::size_t, const ElementEstimate& est) { out.push_back(est); });
    return out;
}

/// theta = sqrt(sum eta^2) / exact error.
inline EffectivityReport effectivity(std::span<const ElementEstimate> estimates, double exact_error)
{
    if (!(exact_error > 0.0))
        throw UndefinedEffectivityError("effectivity: exact error is zero, effectivity index undefined");
    EffectivityReport r;
    r.eta_total = eta_total(estimates);
    r.error = exact_error;
    r.theta = r.eta_total / exact_error;
    return r;
}

} // namespace hbplate
