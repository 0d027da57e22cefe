#pragma once

/**
 * @file adaptive_driver.hpp
 * @brief SOLVE -> ESTIMATE -> MARK -> REFINE loop with maximum marking,
 * same-level neighbour expansion and convergence records.
 */

#include "hbplate/error_estimation.hpp"
#include "hbplate/errors.hpp"
#include "hbplate/hb_space.hpp"
#include "hbplate/plate_assembly.hpp"
#include "hbplate/plate_problem.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hbplate {

struct MarkParams {
    double gamma = 0.5;
};

enum class RefineMode { uniform, adaptive };
enum class EstimatorKind { bubble, residual };

struct LoopConfig {
    int max_iterations = 10;
    long long max_dofs = std::numeric_limits<long long>::max();
    RefineMode mode = RefineMode::adaptive;
    EstimatorKind estimator = EstimatorKind::bubble;
    int admissibility = 0;  ///< class m; 0 selects p - 1
    double C_a = 3.0;
    MarkParams mark{};
    bool parallel = false;
    int load_grading_layers = 0;  ///< see AssemblyOptions

    [[nodiscard]] int admissibility_for(int p) const { return admissibility > 0 ? admissibility : p - 1; }
};

inline constexpr double not_available = std::numeric_limits<double>::quiet_NaN();

struct IterationRecord {
    int iteration = 0;
    long long dofs = 0;
    long long n_elements = 0;
    double h_max = 0.0;
    double error_h2 = not_available;
    double eta_total = not_available;
    double theta = not_available;
    double qoi = not_available;
};

/// {e : eta_e > gamma * max eta}, sorted. Empty when every estimate is zero.
inline std::vector<ElementId> mark_maximum(std::span<const ElementEstimate> estimates, const MarkParams& params = {})
{
    if (estimates.empty()) throw std::invalid_argument("mark_maximum: no estimates");
    if (!(params.gamma > 0.0 && params.gamma < 1.0)) throw std::invalid_argument("mark_maximum: gamma must lie in (0, 1)");
    double top = 0.0;
    for (const ElementEstimate& e : estimates) {
        if (!(e.eta >= 0.0)) throw std::invalid_argument("mark_maximum: estimates must be finite and nonnegative");
        top = std::max(top, e.eta);
    }
    std::vector<ElementId> out;
    if (top == 0.0) return out;
    for (const ElementEstimate& e : estimates)
        if (e.eta > params.gamma * top) out.push_back(e.element);
    std::sort(out.begin(), out.end());
    return out;
}

/// The marked elements together with their active same-level neighbours.
inline std::vector<ElementId> expand_marks(const HierarchicalMesh& mesh, std::span<const ElementId> marked)
{
    std::vector<ElementId> out(marked.begin(), marked.end());
    for (const ElementId& e : marked) {
        const auto n = neighbors(mesh, e);
        out.insert(out.end(), n.begin(), n.end());
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

/// Optional inputs of a study: exact solution for error measurement, the
/// point whose deflection is recorded, and a per-iteration observer.
struct StudyHooks {
    HessianField exact_hessian;
    std::optional<Eigen::Vector2d> qoi_point;
    std::function<void(const IterationRecord&, const HierarchicalMesh&)> on_iteration;
};

/// Parametric size of the coarsest active element.
inline double max_element_size(const HierarchicalMesh& mesh)
{
    return mesh.element_size(mesh.coarsest_active_level());
}

/**
 * @brief Runs the loop from the given space. Stops after max_iterations
 * solves, before solving a space with more than max_dofs functions, or when
 * every indicator vanishes.
 * @throws StagnationError if a refinement step adds no functions.
 */
inline std::vector<IterationRecord> run(const PlateProblem& pr, const GeometryMap& geo, HierarchicalSpace space,
                                        const LoopConfig& cfg, const StudyHooks& hooks = {})
{
    if (cfg.max_iterations < 1 || cfg.max_dofs < 1) throw std::invalid_argument("run: budgets must be positive");
    const int p = space.mesh.degree();
    const int m = cfg.admissibility_for(p);
    if (m < 2) throw std::invalid_argument("run: admissibility class must be >= 2");
    const AssemblyOptions aopts{cfg.parallel, cfg.load_grading_layers};

    std::vector<IterationRecord> records;
    HierarchicalMesh mesh = std::move(space.mesh);
    HierarchicalBasis basis = std::move(space.basis);
    for (int it = 0; it < cfg.max_iterations; ++it) {
        if (static_cast<long long>(basis.size()) > cfg.max_dofs) break;
        if (!check_admissible(mesh, basis, m))
            throw RefinementError("run: mesh lost admissibility of class " + std::to_string(m));

        LinearSystem sys = apply_dirichlet(assemble_system(mesh, basis, geo, pr, aopts), mesh, basis, geo, pr);
        const DiscreteField u = solve(sys);

        IterationRecord rec;
        rec.iteration = it;
        rec.dofs = static_cast<long long>(basis.size());
        rec.n_elements = static_cast<long long>(mesh.num_active());
        rec.h_max = max_element_size(mesh);
        double energy = not_available;
        if (hooks.exact_hessian) {
            rec.error_h2 = h2_seminorm_error(u, hooks.exact_hessian, mesh, basis, geo, aopts);
            energy = energy_error(u, hooks.exact_hessian, mesh, basis, geo, pr, aopts);
        }
        std::vector<ElementEstimate> est;
        if (cfg.estimator == EstimatorKind::bubble) {
            est = estimate(u, mesh, basis, geo, pr, {cfg.C_a, cfg.parallel, cfg.load_grading_layers}).elements;
        } else {
            est = residual_estimator(u, mesh, basis, geo, pr, cfg.parallel);
        }
        rec.eta_total = eta_total(est);
        if (energy > 0.0) rec.theta = effectivity(est, energy).theta;
        if (hooks.qoi_point) rec.qoi = evaluate(u, mesh, basis, geo, *hooks.qoi_point).value;
        records.push_back(rec);
        if (hooks.on_iteration) hooks.on_iteration(rec, mesh);
        if (it + 1 == cfg.max_iterations) break;

        std::vector<ElementId> marked;
        if (cfg.mode == RefineMode::uniform) {
            marked = mesh.active_elements();
        } else {
            marked = mark_maximum(est, cfg.mark);
            if (marked.empty()) break;
            marked = expand_marks(mesh, marked);
        }
        HierarchicalMesh next = refine(mesh, marked, m);
        HierarchicalBasis next_basis = rebuild_basis(next);
        if (next_basis.size() <= basis.size())
            throw StagnationError("run: refinement at iteration " + std::to_string(it) + " added no functions");
        mesh = std::move(next);
        basis = std::move(next_basis);
    }
    return records;
}

enum class SlopeAxis { h, sqrt_dofs };
enum class SlopeQuantity { error_h2, eta_total };

/// Least-squares slope of log(quantity) against log(h) or log(sqrt(dofs))
/// over the last k records with a positive finite quantity.
inline double slopes(std::span<const IterationRecord> records, SlopeAxis axis,
                     SlopeQuantity quantity = SlopeQuantity::error_h2, int k = 3)
{
    if (k < 3) throw std::invalid_argument("slopes: need k >= 3");
    std::vector<std::pair<double, double>> pts;
    for (const IterationRecord& r : records) {
        const double y = quantity == SlopeQuantity::error_h2 ? r.error_h2 : r.eta_total;
        const double x = axis == SlopeAxis::h ? r.h_max : std::sqrt(static_cast<double>(r.dofs));
        if (std::isfinite(y) && y > 0.0 && x > 0.0) pts.emplace_back(std::log(x), std::log(y));
    }
    if (pts.size() < 3) throw InsufficientDataError("slopes: fewer than 3 records with positive values");
    const std::size_t n = std::min<std::size_t>(pts.size(), static_cast<std::size_t>(k));
    const auto tail = std::span(pts).last(n);
    double mx = 0.0, my = 0.0;
    for (const auto& [x, y] : tail) {
        mx += x;
        my += y;
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0;
    for (const auto& [x, y] : tail) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if (sxx == 0.0) throw InsufficientDataError("slopes: abscissae do not vary");
    return sxy / sxx;
}

} // namespace hbplate
