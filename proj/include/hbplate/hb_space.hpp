#pragma once

/**
 * @file hb_space.hpp
 * @brief Multi-level dyadic meshes on the unit parametric square and the
 * hierarchical B-spline basis built on them.
 *
 * Level l carries the open uniform knot vector with n0 * 2^l elements per
 * direction. Every level-l cell is in exactly one of three states: active
 * (an element of the current partition), refined (its descendants are
 * active), or absent (it lies inside a coarser active element). A level-l
 * function is active iff every cell of its support is active or refined at
 * level l and at least one of them is active.
 */

#include "hbplate/errors.hpp"
#include "hbplate/spline_core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

namespace hbplate {

struct Cell {
    int i = 0;
    int j = 0;
    friend auto operator<=>(const Cell&, const Cell&) = default;
};

struct ElementId {
    int level = 0;
    int i = 0;
    int j = 0;
    friend auto operator<=>(const ElementId&, const ElementId&) = default;
};

struct FunctionId {
    int level = 0;
    int i = 0;
    int j = 0;
    friend auto operator<=>(const FunctionId&, const FunctionId&) = default;
};

/// Sides of the parametric square, also used for the sides of an element.
enum class Side { left = 0, right = 1, bottom = 2, top = 3 };
inline constexpr std::array<Side, 4> all_sides{Side::left, Side::right, Side::bottom, Side::top};

/// Axis-aligned box in parametric coordinates.
struct Box {
    double x0, y0, x1, y1;
};

class HierarchicalMesh {
public:
    static constexpr int default_max_level = 20;

    HierarchicalMesh(int n0, int p, int max_level = default_max_level)
        : n0_(n0), degree_(p), max_level_(max_level)
    {
        if (n0 < 1) throw std::invalid_argument("HierarchicalMesh: n0 must be >= 1");
        if (p < 3)
            throw UnsupportedDegreeError("HierarchicalMesh: degree " + std::to_string(p) +
                                         " unsupported, need p >= 3");
        if (max_level < 0) throw std::invalid_argument("HierarchicalMesh: negative max level");
        add_level();
        for (int j = 0; j < n0; ++j)
            for (int i = 0; i < n0; ++i) active_[0].insert({i, j});
    }

    [[nodiscard]] int n0() const noexcept { return n0_; }
    [[nodiscard]] int degree() const noexcept { return degree_; }
    [[nodiscard]] int max_level() const noexcept { return max_level_; }
    [[nodiscard]] int num_levels() const noexcept { return static_cast<int>(active_.size()); }
    [[nodiscard]] int cells_per_side(int level) const noexcept { return n0_ << level; }
    [[nodiscard]] int functions_per_side(int level) const noexcept { return cells_per_side(level) + degree_; }
    [[nodiscard]] double element_size(int level) const noexcept { return 1.0 / cells_per_side(level); }
    [[nodiscard]] const KnotVector& knots(int level) const { return knots_.at(level); }

    [[nodiscard]] const std::set<Cell>& active_cells(int level) const { return active_.at(level); }
    [[nodiscard]] const std::set<Cell>& refined_cells(int level) const { return refined_.at(level); }

    [[nodiscard]] bool is_active(const ElementId& e) const
    {
        return e.level >= 0 && e.level < num_levels() && active_[e.level].contains({e.i, e.j});
    }
    [[nodiscard]] bool is_refined(const ElementId& e) const
    {
        return e.level >= 0 && e.level < num_levels() && refined_[e.level].contains({e.i, e.j});
    }
    /// Active or refined, i.e. inside the level-l domain or its refinement.
    [[nodiscard]] bool is_present(int level, int i, int j) const
    {
        return is_active({level, i, j}) || is_refined({level, i, j});
    }

    /// Active elements ordered by level, then by cell.
    [[nodiscard]] std::vector<ElementId> active_elements() const
    {
        std::vector<ElementId> out;
        out.reserve(num_active());
        for (int l = 0; l < num_levels(); ++l)
            for (const Cell& c : active_[l]) out.push_back({l, c.i, c.j});
        return out;
    }

    [[nodiscard]] std::size_t num_active() const noexcept
    {
        std::size_t n = 0;
        for (const auto& s : active_) n += s.size();
        return n;
    }

    [[nodiscard]] int finest_active_level() const noexcept
    {
        for (int l = num_levels() - 1; l >= 0; --l)
            if (!active_[l].empty()) return l;
        return 0;
    }

    [[nodiscard]] int coarsest_active_level() const noexcept
    {
        for (int l = 0; l < num_levels(); ++l)
            if (!active_[l].empty()) return l;
        return 0;
    }

    [[nodiscard]] Box bounds(const ElementId& e) const
    {
        const double h = element_size(e.level);
        return {e.i * h, e.j * h, (e.i + 1) * h, (e.j + 1) * h};
    }

    /// Active element containing the parametric point; points on shared
    /// edges go to the element on the upper/right side, except on the
    /// domain's right and top boundary.
    [[nodiscard]] ElementId locate(double x, double y) const
    {
        if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0))
            throw OutOfDomainError("locate: point outside the unit square");
        for (int l = 0; l < num_levels(); ++l) {
            const int n = cells_per_side(l);
            const int i = std::min(static_cast<int>(std::floor(x * n)), n - 1);
            const int j = std::min(static_cast<int>(std::floor(y * n)), n - 1);
            if (is_active({l, i, j})) return {l, i, j};
            if (!is_refined({l, i, j})) break;
        }
        throw std::logic_error("locate: mesh does not cover the point");
    }

    /// Replaces an active element by its four children. No admissibility
    /// closure is applied; see refine().
    void split(const ElementId& e)
    {
        if (!is_active(e)) throw std::invalid_argument("split: element is not active");
        if (e.level + 1 > max_level_)
            throw RefinementError("split: refining level " + std::to_string(e.level) +
                                  " would exceed the maximum level " + std::to_string(max_level_));
        if (e.level + 1 == num_levels()) add_level();
        active_[e.level].erase({e.i, e.j});
        refined_[e.level].insert({e.i, e.j});
        for (int dj = 0; dj < 2; ++dj)
            for (int di = 0; di < 2; ++di) active_[e.level + 1].insert({2 * e.i + di, 2 * e.j + dj});
    }

    /// Parametric area covered by the active elements; 1 for a valid partition.
    [[nodiscard]] double active_area() const
    {
        double area = 0.0;
        for (int l = 0; l < num_levels(); ++l) {
            const double h = element_size(l);
            area += static_cast<double>(active_[l].size()) * h * h;
        }
        return area;
    }

    /**
     * @brief Active elements adjacent to side `side` of active element e,
     * i.e. sharing a segment of positive length with it. Empty on the
     * domain boundary.
     */
    [[nodiscard]] std::vector<ElementId> face_neighbors(const ElementId& e, Side side) const
    {
        const int n = cells_per_side(e.level);
        int ni = e.i;
        int nj = e.j;
        switch (side) {
        case Side::left: --ni; break;
        case Side::right: ++ni; break;
        case Side::bottom: --nj; break;
        case Side::top: ++nj; break;
        }
        if (ni < 0 || nj < 0 || ni >= n || nj >= n) return {};
        // coarser or equal neighbor
        for (int l = e.level; l >= 0; --l) {
            const int s = e.level - l;
            const ElementId anc{l, ni >> s, nj >> s};
            if (is_active(anc)) return {anc};
            if (is_refined(anc)) break;
        }
        // finer neighbors: descendants of the same-level cell touching the shared side
        std::vector<ElementId> out;
        std::vector<ElementId> stack{{e.level, ni, nj}};
        while (!stack.empty()) {
            const ElementId c = stack.back();
            stack.pop_back();
            if (is_active(c)) {
                out.push_back(c);
                continue;
            }
            if (!is_refined(c)) continue;
            for (int d = 0; d < 2; ++d) {
                switch (side) {
                case Side::left: stack.push_back({c.level + 1, 2 * c.i + 1, 2 * c.j + d}); break;
                case Side::right: stack.push_back({c.level + 1, 2 * c.i, 2 * c.j + d}); break;
                case Side::bottom: stack.push_back({c.level + 1, 2 * c.i + d, 2 * c.j + 1}); break;
                case Side::top: stack.push_back({c.level + 1, 2 * c.i + d, 2 * c.j}); break;
                }
            }
        }
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    void add_level()
    {
        const int l = num_levels();
        knots_.push_back(make_open_uniform(cells_per_side(l), degree_));
        active_.emplace_back();
        refined_.emplace_back();
    }

    int n0_;
    int degree_;
    int max_level_;
    std::vector<KnotVector> knots_;
    std::vector<std::set<Cell>> active_;
    std::vector<std::set<Cell>> refined_;
};

/// The active hierarchical functions with their dof numbering (level, then j, then i).
class HierarchicalBasis {
public:
    HierarchicalBasis() = default;

    explicit HierarchicalBasis(std::vector<FunctionId> functions) : functions_(std::move(functions))
    {
        std::sort(functions_.begin(), functions_.end(), [](const FunctionId& a, const FunctionId& b) {
            return std::tie(a.level, a.j, a.i) < std::tie(b.level, b.j, b.i);
        });
        for (std::size_t k = 0; k < functions_.size(); ++k) {
            const FunctionId& f = functions_[k];
            if (f.level >= static_cast<int>(index_.size())) index_.resize(f.level + 1);
            index_[f.level].emplace(key(f.i, f.j), static_cast<int>(k));
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return functions_.size(); }
    [[nodiscard]] const std::vector<FunctionId>& functions() const noexcept { return functions_; }
    [[nodiscard]] const FunctionId& function(int dof) const { return functions_.at(dof); }

    /// Dof index of f, or -1 when f is not active.
    [[nodiscard]] int dof(const FunctionId& f) const
    {
        if (f.level < 0 || f.level >= static_cast<int>(index_.size())) return -1;
        const auto it = index_[f.level].find(key(f.i, f.j));
        return it == index_[f.level].end() ? -1 : it->second;
    }

    [[nodiscard]] bool contains(const FunctionId& f) const { return dof(f) >= 0; }

private:
    static std::uint64_t key(int i, int j)
    {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(i)) << 32) |
               static_cast<std::uint32_t>(j);
    }

    std::vector<FunctionId> functions_;
    std::vector<std::unordered_map<std::uint64_t, int>> index_;
};

struct HierarchicalSpace {
    HierarchicalMesh mesh;
    HierarchicalBasis basis;
};

/// Level-l support of function index a along one direction, as the
/// half-open cell range [first, last).
inline std::pair<int, int> support_cells(const HierarchicalMesh& mesh, int level, int a)
{
    return {std::max(0, a - mesh.degree()), std::min(mesh.cells_per_side(level), a + 1)};
}

inline HierarchicalBasis rebuild_basis(const HierarchicalMesh& mesh)
{
    const int p = mesh.degree();
    std::vector<FunctionId> active;
    for (int l = 0; l < mesh.num_levels(); ++l) {
        std::set<Cell> candidates;
        for (const Cell& c : mesh.active_cells(l))
            for (int b = c.j; b <= c.j + p; ++b)
                for (int a = c.i; a <= c.i + p; ++a) candidates.insert({a, b});
        for (const Cell& f : candidates) {
            const auto [i0, i1] = support_cells(mesh, l, f.i);
            const auto [j0, j1] = support_cells(mesh, l, f.j);
            bool inside = true;
            for (int j = j0; j < j1 && inside; ++j)
                for (int i = i0; i < i1 && inside; ++i) inside = mesh.is_present(l, i, j);
            if (inside) active.push_back({l, f.i, f.j});
        }
    }
    return HierarchicalBasis(std::move(active));
}

/// Single-level space with n0 x n0 elements of degree p.
inline HierarchicalSpace init(int n0, int p, int max_level = HierarchicalMesh::default_max_level)
{
    HierarchicalMesh mesh(n0, p, max_level);
    HierarchicalBasis basis = rebuild_basis(mesh);
    return {std::move(mesh), std::move(basis)};
}

struct LocalFunction {
    FunctionId id;
    int dof = -1;
};

/// Active functions nonzero on the active element e, ordered by level, j, i.
inline std::vector<LocalFunction> connectivity(const HierarchicalMesh& mesh, const HierarchicalBasis& basis,
                                               const ElementId& e)
{
    const int p = mesh.degree();
    std::vector<LocalFunction> out;
    for (int l = 0; l <= e.level; ++l) {
        const int s = e.level - l;
        const int ai = e.i >> s;
        const int aj = e.j >> s;
        for (int b = aj; b <= aj + p; ++b) {
            for (int a = ai; a <= ai + p; ++a) {
                const FunctionId f{l, a, b};
                if (const int d = basis.dof(f); d >= 0) out.push_back({f, d});
            }
        }
    }
    return out;
}

/// Every active function acting on an element of level l has level >= l - m + 1.
inline bool check_admissible(const HierarchicalMesh& mesh, const HierarchicalBasis& basis, int m)
{
    for (const ElementId& e : mesh.active_elements()) {
        for (const LocalFunction& f : connectivity(mesh, basis, e))
            if (f.id.level < e.level - m + 1) return false;
    }
    return true;
}

inline bool check_admissible(const HierarchicalMesh& mesh, int m)
{
    return check_admissible(mesh, rebuild_basis(mesh), m);
}

/// Active same-level elements sharing an edge or a vertex with e.
inline std::vector<ElementId> neighbors(const HierarchicalMesh& mesh, const ElementId& e)
{
    std::vector<ElementId> out;
    for (int dj = -1; dj <= 1; ++dj) {
        for (int di = -1; di <= 1; ++di) {
            if (di == 0 && dj == 0) continue;
            const ElementId n{e.level, e.i + di, e.j + dj};
            if (mesh.is_active(n)) out.push_back(n);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace detail {

/**
 * Refines e after first refining every active element of level <= l-m+1
 * that overlaps the support extension of e at level l-m+1 (the union of
 * supports of level-(l-m+1) B-splines acting on e).
 */
inline void refine_recursive(HierarchicalMesh& mesh, const ElementId& e, int m)
{
    const int k = e.level - m + 1;
    if (k >= 0) {
        const int p = mesh.degree();
        const int shift = e.level - k;
        const int ai = e.i >> shift;
        const int aj = e.j >> shift;
        const int nk = mesh.cells_per_side(k);
        const int i_lo = std::max(0, ai - p);
        const int i_hi = std::min(nk, ai + p + 1);
        const int j_lo = std::max(0, aj - p);
        const int j_hi = std::min(nk, aj + p + 1);
        for (;;) {
            std::vector<ElementId> hits;
            for (int l = 0; l <= k && l < mesh.num_levels(); ++l) {
                const int s = k - l;
                for (int cj = j_lo >> s; cj <= (j_hi - 1) >> s; ++cj)
                    for (int ci = i_lo >> s; ci <= (i_hi - 1) >> s; ++ci)
                        if (mesh.is_active({l, ci, cj})) hits.push_back({l, ci, cj});
            }
            if (hits.empty()) break;
            for (const ElementId& h : hits)
                if (mesh.is_active(h)) refine_recursive(mesh, h, m);
        }
    }
    if (mesh.is_active(e)) mesh.split(e);
}

} // namespace detail

/**
 * @brief Dyadic refinement of the marked elements with admissibility
 * closure of class m. Returns a new mesh; the input is left untouched.
 */
inline HierarchicalMesh refine(const HierarchicalMesh& mesh, std::span<const ElementId> marked, int m)
{
    if (m < 2) throw std::invalid_argument("refine: admissibility class must be >= 2");
    std::vector<ElementId> order(marked.begin(), marked.end());
    std::sort(order.begin(), order.end());
    order.erase(std::unique(order.begin(), order.end()), order.end());
    for (const ElementId& e : order) {
        if (!mesh.is_active(e)) throw std::invalid_argument("refine: marked element is not active");
        if (e.level + 1 > mesh.max_level())
            throw RefinementError("refine: element at level " + std::to_string(e.level) +
                                  " cannot be refined beyond the maximum level " +
                                  std::to_string(mesh.max_level()));
    }
    HierarchicalMesh out = mesh;
    for (const ElementId& e : order)
        if (out.is_active(e)) detail::refine_recursive(out, e, m);
    return out;
}

inline HierarchicalMesh refine_uniform(const HierarchicalMesh& mesh, int m)
{
    const auto all = mesh.active_elements();
    return refine(mesh, all, m);
}

/// One active element per line: "level x0 y0 x1 y1", 17 significant digits.
inline void dump_mesh(const HierarchicalMesh& mesh, std::ostream& os)
{
    const auto old_precision = os.precision(17);
    for (const ElementId& e : mesh.active_elements()) {
        const Box b = mesh.bounds(e);
        os << e.level << ' ' << b.x0 << ' ' << b.y0 << ' ' << b.x1 << ' ' << b.y1 << '\n';
    }
    os.precision(old_precision);
}

} // namespace hbplate
