#pragma once

#include "hbplate/hb_space.hpp"
#include "hbplate/plate_problem.hpp"
#include "hbplate/spline_core.hpp"

#include <Eigen/Dense>

#include <random>
#include <set>
#include <vector>

namespace hbtest {

using namespace hbplate;

/// Value of the level-l tensor B-spline f at (x, y), evaluated from scratch.
inline double function_value(const HierarchicalMesh& mesh, const FunctionId& f, double x, double y)
{
    const KnotVector& kv = mesh.knots(f.level);
    const BasisEval bx = eval_ders(kv, x, 0);
    const BasisEval by = eval_ders(kv, y, 0);
    const int a = f.i - bx.first_index;
    const int b = f.j - by.first_index;
    if (a < 0 || b < 0 || a > kv.degree() || b > kv.degree()) return 0.0;
    return bx.values()[a] * by.values()[b];
}

/// Parametric support box of a function.
inline Box support_box(const HierarchicalMesh& mesh, const FunctionId& f)
{
    const double h = mesh.element_size(f.level);
    const int p = mesh.degree();
    const int n = mesh.cells_per_side(f.level);
    return {std::max(0, f.i - p) * h, std::max(0, f.j - p) * h, std::min(n, f.i + 1) * h,
            std::min(n, f.j + 1) * h};
}

inline bool overlaps(const Box& a, const Box& b)
{
    return std::min(a.x1, b.x1) > std::max(a.x0, b.x0) + 1e-14 && std::min(a.y1, b.y1) > std::max(a.y0, b.y0) + 1e-14;
}

/**
 * Hierarchical basis from the set definition: a level-l function is kept
 * iff its support lies in the union of active elements of level >= l and
 * meets an active element of level exactly l. Membership is decided by
 * locating level-l cell centres.
 */
inline std::set<FunctionId> brute_force_basis(const HierarchicalMesh& mesh)
{
    std::set<FunctionId> out;
    const int p = mesh.degree();
    for (int l = 0; l < mesh.num_levels(); ++l) {
        const int n = mesh.cells_per_side(l);
        const double h = mesh.element_size(l);
        for (int b = 0; b < n + p; ++b) {
            for (int a = 0; a < n + p; ++a) {
                bool inside = true;
                bool touches_level = false;
                for (int j = std::max(0, b - p); j <= std::min(n - 1, b) && inside; ++j) {
                    for (int i = std::max(0, a - p); i <= std::min(n - 1, a) && inside; ++i) {
                        const ElementId e = mesh.locate((i + 0.5) * h, (j + 0.5) * h);
                        inside = e.level >= l;
                        touches_level = touches_level || e.level == l;
                    }
                }
                if (inside && touches_level) out.insert({l, a, b});
            }
        }
    }
    return out;
}

/// Evaluation matrix of all basis functions at an n x n grid of cell-interior points.
inline Eigen::MatrixXd sample_matrix(const HierarchicalMesh& mesh, const HierarchicalBasis& basis, int n)
{
    Eigen::MatrixXd B(n * n, static_cast<int>(basis.size()));
    for (int s = 0; s < n; ++s)
        for (int t = 0; t < n; ++t) {
            const double x = (s + 0.5) / n;
            const double y = (t + 0.5) / n;
            for (int d = 0; d < static_cast<int>(basis.size()); ++d)
                B(t * n + s, d) = function_value(mesh, basis.function(d), x, y);
        }
    return B;
}

/// Random refinement sequence step: marks a random nonempty subset of active elements below the level cap.
inline std::vector<ElementId> random_marks(const HierarchicalMesh& mesh, std::mt19937& rng, double fraction)
{
    std::vector<ElementId> marks;
    std::bernoulli_distribution pick(fraction);
    const auto all = mesh.active_elements();
    for (const ElementId& e : all)
        if (e.level < mesh.max_level() && pick(rng)) marks.push_back(e);
    if (marks.empty()) {
        std::vector<ElementId> candidates;
        for (const ElementId& e : all)
            if (e.level < mesh.max_level()) candidates.push_back(e);
        if (!candidates.empty())
            marks.push_back(candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)]);
    }
    return marks;
}

/// No active element has an active ancestor.
inline bool nested_partition(const HierarchicalMesh& mesh)
{
    for (const ElementId& e : mesh.active_elements())
        for (int l = 0; l < e.level; ++l) {
            const int s = e.level - l;
            if (mesh.is_active({l, e.i >> s, e.j >> s})) return false;
        }
    return true;
}

/// Level-0 mesh with two refined cells, one of them refined once more.
inline HierarchicalMesh two_level_mesh(int n0, int p)
{
    HierarchicalMesh m(n0, p);
    const std::vector<ElementId> marks{{0, 0, 0}, {0, 1, 0}};
    m = refine(m, marks, p - 1);
    const std::vector<ElementId> inner{m.locate(0.1, 0.1)};
    return refine(m, inner, p - 1);
}

/// u = x^2 y^2 with g = 8 and simply supported data taken from u.
inline PlateProblem quartic_problem()
{
    PlateProblem pr;
    pr.load = [](double, double) { return 8.0; };
    const ScalarField u = [](double x, double y) { return x * x * y * y; };
    pr.side(Side::left) = SideCondition::simply_supported(u, [](double, double y) { return 2.0 * y * y; });
    pr.side(Side::right) = SideCondition::simply_supported(u, [](double, double y) { return 2.0 * y * y; });
    pr.side(Side::bottom) = SideCondition::simply_supported(u, [](double x, double) { return 2.0 * x * x; });
    pr.side(Side::top) = SideCondition::simply_supported(u, [](double x, double) { return 2.0 * x * x; });
    return pr;
}

inline Eigen::Matrix2d quartic_hessian(double x, double y)
{
    Eigen::Matrix2d H;
    H << 2 * y * y, 4 * x * y, 4 * x * y, 2 * x * x;
    return H;
}

} // namespace hbtest
