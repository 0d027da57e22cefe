#pragma once

/**
 * @file spline_core.hpp
 * @brief Univariate B-spline and Bernstein evaluation, tensor products and
 * dyadic knot refinement.
 *
 * Knot vectors are open and of maximum smoothness: the end knots are
 * repeated degree+1 times and every interior knot appears once.
 */

#include "hbplate/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace hbplate {

class KnotVector {
public:
    KnotVector() = default;

    KnotVector(std::vector<double> knots, int degree) : knots_(std::move(knots)), degree_(degree)
    {
        if (degree_ < 2)
            throw std::invalid_argument("KnotVector: degree must be >= 2, got " + std::to_string(degree_));
        const auto m = static_cast<int>(knots_.size());
        if (m < 2 * (degree_ + 1))
            throw std::invalid_argument("KnotVector: need at least 2(p+1) knots");
        if (!std::is_sorted(knots_.begin(), knots_.end()))
            throw std::invalid_argument("KnotVector: knots must be nondecreasing");
        for (int k = 1; k <= degree_; ++k) {
            if (knots_[k] != knots_[0] || knots_[m - 1 - k] != knots_[m - 1])
                throw std::invalid_argument("KnotVector: knot vector must be open");
        }
        if (!(knots_.front() < knots_.back()))
            throw std::invalid_argument("KnotVector: empty parametric interval");
        for (int k = degree_; k < m - degree_ - 1; ++k) {
            if (!(knots_[k] < knots_[k + 1]))
                throw std::invalid_argument("KnotVector: repeated interior knots are not supported");
        }
    }

    [[nodiscard]] int degree() const noexcept { return degree_; }
    [[nodiscard]] const std::vector<double>& knots() const noexcept { return knots_; }
    [[nodiscard]] int num_functions() const noexcept
    {
        return static_cast<int>(knots_.size()) - degree_ - 1;
    }
    [[nodiscard]] int num_elements() const noexcept { return num_functions() - degree_; }
    [[nodiscard]] double front() const noexcept { return knots_.front(); }
    [[nodiscard]] double back() const noexcept { return knots_.back(); }

    /// Knot span index s with knots[s] <= x < knots[s+1]; the last span owns
    /// the right endpoint.
    [[nodiscard]] int find_span(double x) const
    {
        if (!(x >= front() && x <= back()))
            throw OutOfDomainError("find_span: x = " + std::to_string(x) + " outside [" +
                                   std::to_string(front()) + ", " + std::to_string(back()) + "]");
        const int n = num_functions();
        if (x == back()) return n - 1;
        const auto it = std::upper_bound(knots_.begin() + degree_, knots_.begin() + n + 1, x);
        return static_cast<int>(it - knots_.begin()) - 1;
    }

    friend bool operator==(const KnotVector&, const KnotVector&) = default;

private:
    std::vector<double> knots_;
    int degree_ = 0;
};

/// Nonzero functions at a point: ders[k][j] is the k-th derivative of
/// function first_index + j.
struct BasisEval {
    int first_index = 0;
    std::vector<std::vector<double>> ders;

    [[nodiscard]] std::size_t size() const noexcept { return ders.empty() ? 0 : ders[0].size(); }
    [[nodiscard]] std::span<const double> values() const { return ders.at(0); }
    [[nodiscard]] std::span<const double> d1() const { return ders.at(1); }
    [[nodiscard]] std::span<const double> d2() const { return ders.at(2); }
};

inline KnotVector make_open_uniform(int n_elements, int p, double a = 0.0, double b = 1.0)
{
    if (n_elements < 1)
        throw std::invalid_argument("make_open_uniform: n_elements must be >= 1");
    if (p < 2)
        throw std::invalid_argument("make_open_uniform: degree must be >= 2");
    if (!(a < b))
        throw std::invalid_argument("make_open_uniform: empty interval");
    std::vector<double> knots;
    knots.reserve(n_elements + 2 * p + 1);
    knots.insert(knots.end(), p + 1, a);
    for (int k = 1; k < n_elements; ++k)
        knots.push_back(a + (b - a) * static_cast<double>(k) / n_elements);
    knots.insert(knots.end(), p + 1, b);
    return KnotVector(std::move(knots), p);
}

/**
 * @brief Derivatives of the p+1 functions that are nonzero on knot span
 * `span`, evaluated at x with the polynomial piece of that span.
 *
 * The span is taken as given, so x on a span boundary yields one-sided
 * values. Orders above the degree are returned as zero rows.
 */
inline BasisEval eval_ders_in_span(const KnotVector& kv, int span, double x, int max_der)
{
    const int p = kv.degree();
    const auto& U = kv.knots();
    if (span < p || span >= kv.num_functions() || !(U[span] < U[span + 1]))
        throw std::invalid_argument("eval_ders_in_span: invalid span " + std::to_string(span));
    if (max_der < 0) throw std::invalid_argument("eval_ders_in_span: negative derivative order");

    const int n = std::min(max_der, p);
    std::vector<std::vector<double>> ndu(p + 1, std::vector<double>(p + 1, 0.0));
    std::vector<double> left(p + 1, 0.0), right(p + 1, 0.0);
    ndu[0][0] = 1.0;
    for (int j = 1; j <= p; ++j) {
        left[j] = x - U[span + 1 - j];
        right[j] = U[span + j] - x;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            ndu[j][r] = right[r + 1] + left[j - r];
            const double temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }

    BasisEval out;
    out.first_index = span - p;
    out.ders.assign(max_der + 1, std::vector<double>(p + 1, 0.0));
    for (int j = 0; j <= p; ++j) out.ders[0][j] = ndu[j][p];

    std::vector<std::vector<double>> a(2, std::vector<double>(p + 1, 0.0));
    for (int r = 0; r <= p; ++r) {
        int s1 = 0;
        int s2 = 1;
        a[0][0] = 1.0;
        for (int k = 1; k <= n; ++k) {
            double d = 0.0;
            const int rk = r - k;
            const int pk = p - k;
            if (r >= k) {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                d = a[s2][0] * ndu[rk][pk];
            }
            const int j1 = rk >= -1 ? 1 : -rk;
            const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
            for (int j = j1; j <= j2; ++j) {
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
                d += a[s2][j] * ndu[rk + j][pk];
            }
            if (r <= pk) {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            out.ders[k][r] = d;
            std::swap(s1, s2);
        }
    }
    double factor = p;
    for (int k = 1; k <= n; ++k) {
        for (int j = 0; j <= p; ++j) out.ders[k][j] *= factor;
        factor *= (p - k);
    }
    return out;
}

/// Cox-de Boor evaluation of the nonzero functions and their derivatives at x.
inline BasisEval eval_ders(const KnotVector& kv, double x, int max_der)
{
    return eval_ders_in_span(kv, kv.find_span(x), x, max_der);
}

namespace detail {
inline double binomial(int n, int k)
{
    if (k < 0 || k > n) return 0.0;
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

inline double bernstein(int q, int i, double t)
{
    if (i < 0 || i > q) return 0.0;
    return binomial(q, i) * std::pow(t, i) * std::pow(1.0 - t, q - i);
}
} // namespace detail

/**
 * @brief Degree-q Bernstein polynomials on [0,1] and their derivatives in the
 * reference coordinate, from the closed form
 * D^k B_i^q = q!/(q-k)! sum_j (-1)^j C(k,j) B^{q-k}_{i-k+j}.
 */
inline BasisEval eval_bernstein_ders(int q, double t, int max_der)
{
    if (q < 1) throw std::invalid_argument("eval_bernstein_ders: degree must be >= 1");
    if (!(t >= 0.0 && t <= 1.0))
        throw OutOfDomainError("eval_bernstein_ders: t = " + std::to_string(t) + " outside [0,1]");
    if (max_der < 0) throw std::invalid_argument("eval_bernstein_ders: negative derivative order");

    BasisEval out;
    out.first_index = 0;
    out.ders.assign(max_der + 1, std::vector<double>(q + 1, 0.0));
    for (int k = 0; k <= std::min(max_der, q); ++k) {
        double falling = 1.0;
        for (int s = 0; s < k; ++s) falling *= (q - s);
        for (int i = 0; i <= q; ++i) {
            double sum = 0.0;
            for (int j = 0; j <= k; ++j) {
                const double sign = (j % 2 == 0) ? 1.0 : -1.0;
                sum += sign * detail::binomial(k, j) * detail::bernstein(q - k, i - k + j, t);
            }
            out.ders[k][i] = falling * sum;
        }
    }
    return out;
}

/// Nonzero tensor-product functions at a point, stored row by row:
/// local index a = jj * nx + ii refers to b_{first_i+ii}(x) b_{first_j+jj}(y).
struct TensorEval {
    int first_i = 0;
    int first_j = 0;
    int nx = 0;
    int ny = 0;
    std::vector<double> value, dx, dy, dxx, dxy, dyy;
};

inline TensorEval tensor_eval(const KnotVector& kv_x, const KnotVector& kv_y, double x, double y)
{
    const BasisEval bx = eval_ders(kv_x, x, 2);
    const BasisEval by = eval_ders(kv_y, y, 2);
    TensorEval out;
    out.first_i = bx.first_index;
    out.first_j = by.first_index;
    out.nx = static_cast<int>(bx.size());
    out.ny = static_cast<int>(by.size());
    const auto n = static_cast<std::size_t>(out.nx * out.ny);
    for (auto* v : {&out.value, &out.dx, &out.dy, &out.dxx, &out.dxy, &out.dyy}) v->resize(n);
    for (int jj = 0; jj < out.ny; ++jj) {
        for (int ii = 0; ii < out.nx; ++ii) {
            const auto a = static_cast<std::size_t>(jj * out.nx + ii);
            out.value[a] = bx.ders[0][ii] * by.ders[0][jj];
            out.dx[a] = bx.ders[1][ii] * by.ders[0][jj];
            out.dy[a] = bx.ders[0][ii] * by.ders[1][jj];
            out.dxx[a] = bx.ders[2][ii] * by.ders[0][jj];
            out.dxy[a] = bx.ders[1][ii] * by.ders[1][jj];
            out.dyy[a] = bx.ders[0][ii] * by.ders[2][jj];
        }
    }
    return out;
}

/// Bisects every nonempty span.
inline KnotVector dyadic_refine(const KnotVector& kv)
{
    const int p = kv.degree();
    const auto& U = kv.knots();
    std::vector<double> knots;
    knots.reserve(U.size() + kv.num_elements());
    knots.insert(knots.end(), p + 1, U.front());
    for (int s = p; s < kv.num_functions(); ++s) {
        if (s > p) knots.push_back(U[s]);
        knots.push_back(0.5 * (U[s] + U[s + 1]));
    }
    knots.insert(knots.end(), p + 1, U.back());
    return KnotVector(std::move(knots), p);
}

} // namespace hbplate
