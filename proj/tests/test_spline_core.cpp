#include "hbplate/spline_core.hpp"

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include <numeric>
#include <random>

using namespace hbplate;

namespace {

std::vector<KnotVector> sample_knot_vectors()
{
    std::vector<KnotVector> out;
    for (int p = 2; p <= 5; ++p)
        for (int n : {1, 2, 5, 8}) out.push_back(make_open_uniform(n, p, -0.5, 2.0));
    // nonuniform maximum-smoothness vector
    out.emplace_back(std::vector<double>{0, 0, 0, 0, 0.1, 0.35, 0.4, 0.9, 1, 1, 1, 1}, 3);
    return out;
}

double sum(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

} // namespace

TEST(KnotVector, OpenUniformConstruction)
{
    const KnotVector single = make_open_uniform(1, 3);
    EXPECT_EQ(single.knots(), (std::vector<double>{0, 0, 0, 0, 1, 1, 1, 1}));
    EXPECT_EQ(make_open_uniform(4, 3).num_functions(), 7);
    const KnotVector kv = make_open_uniform(2, 4, 0.0, 2.0);
    EXPECT_EQ(kv.num_functions(), 6);
    EXPECT_EQ(std::count(kv.knots().begin(), kv.knots().end(), 1.0), 1);
}

TEST(KnotVector, RejectsInvalidInput)
{
    EXPECT_THROW(make_open_uniform(0, 3), std::invalid_argument);
    EXPECT_THROW(make_open_uniform(3, 1), std::invalid_argument);
    EXPECT_THROW(KnotVector({0, 0, 0, 0.5, 0.5, 1, 1, 1}, 2), std::invalid_argument);
    EXPECT_THROW(KnotVector({0, 0, 0.2, 1, 1, 1}, 2), std::invalid_argument);
    EXPECT_THROW(KnotVector({0, 0, 0, 0.7, 0.3, 1, 1, 1}, 2), std::invalid_argument);
}

TEST(EvalDers, BernsteinKnotValues)
{
    const KnotVector kv = make_open_uniform(1, 3);
    const BasisEval at0 = eval_ders(kv, 0.0, 2);
    EXPECT_EQ(at0.first_index, 0);
    EXPECT_NEAR(at0.values()[0], 1.0, 1e-15);
    for (int k = 1; k < 4; ++k) EXPECT_NEAR(at0.values()[k], 0.0, 1e-15);

    const BasisEval mid = eval_ders(kv, 0.5, 0);
    const double expected[] = {0.125, 0.375, 0.375, 0.125};
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(mid.values()[k], expected[k], 1e-15);

    const BasisEval at1 = eval_ders(kv, 1.0, 0);
    EXPECT_NEAR(at1.values()[3], 1.0, 1e-15);
}

TEST(EvalDers, OutOfDomain)
{
    const KnotVector kv = make_open_uniform(3, 3);
    EXPECT_THROW(eval_ders(kv, -1e-9, 2), OutOfDomainError);
    EXPECT_THROW(eval_ders(kv, 1.0 + 1e-9, 2), OutOfDomainError);
    EXPECT_NO_THROW(eval_ders(kv, 1.0, 2));
}

TEST(EvalDers, PartitionOfUnityAtRandomPoints)
{
    std::mt19937 rng(7);
    for (const KnotVector& kv : sample_knot_vectors()) {
        std::uniform_real_distribution<double> u(kv.front(), kv.back());
        for (int s = 0; s < 100; ++s) {
            const BasisEval b = eval_ders(kv, u(rng), 2);
            ASSERT_EQ(b.size(), static_cast<std::size_t>(kv.degree() + 1));
            EXPECT_NEAR(sum(b.values()), 1.0, 1e-12);
            EXPECT_NEAR(sum(b.d1()), 0.0, 1e-10);
            EXPECT_NEAR(sum(b.d2()), 0.0, 1e-10 * (1.0 + std::abs(b.d2()[0])));
        }
    }
}

TEST(EvalDers, DerivativesMatchCentralDifferences)
{
    std::mt19937 rng(11);
    const double step = 1e-5;
    for (const KnotVector& kv : sample_knot_vectors()) {
        std::uniform_real_distribution<double> u(kv.front() + 2 * step, kv.back() - 2 * step);
        for (int s = 0; s < 50; ++s) {
            const double x = u(rng);
            const int span = kv.find_span(x);
            const BasisEval b = eval_ders_in_span(kv, span, x, 2);
            const BasisEval bp = eval_ders_in_span(kv, span, x + step, 1);
            const BasisEval bm = eval_ders_in_span(kv, span, x - step, 1);
            for (std::size_t k = 0; k < b.size(); ++k) {
                const double fd1 = (bp.ders[0][k] - bm.ders[0][k]) / (2 * step);
                const double fd2 = (bp.ders[1][k] - bm.ders[1][k]) / (2 * step);
                EXPECT_NEAR(fd1, b.ders[1][k], 1e-5 * std::max(1.0, std::abs(b.ders[1][k])));
                EXPECT_NEAR(fd2, b.ders[2][k], 1e-5 * std::max(1.0, std::abs(b.ders[2][k])));
            }
        }
    }
}

TEST(EvalDers, OrdersAboveDegreeVanish)
{
    const KnotVector kv = make_open_uniform(3, 3);
    const BasisEval b = eval_ders(kv, 0.4, 5);
    for (double v : b.ders[4]) EXPECT_EQ(v, 0.0);
    for (double v : b.ders[5]) EXPECT_EQ(v, 0.0);
    double third = 0.0;
    for (double v : b.ders[3]) third += std::abs(v);
    EXPECT_GT(third, 0.0);
}

TEST(Bernstein, EndpointDerivatives)
{
    const BasisEval b0 = eval_bernstein_ders(4, 0.0, 1);
    EXPECT_DOUBLE_EQ(b0.values()[0], 1.0);
    for (int i = 1; i <= 4; ++i) EXPECT_DOUBLE_EQ(b0.values()[i], 0.0);
    EXPECT_DOUBLE_EQ(b0.d1()[0], -4.0);
    EXPECT_DOUBLE_EQ(b0.d1()[1], 4.0);
    EXPECT_DOUBLE_EQ(b0.d1()[2], 0.0);

    const BasisEval b1 = eval_bernstein_ders(4, 1.0, 1);
    for (int i = 0; i <= 4; ++i) {
        EXPECT_DOUBLE_EQ(b1.values()[i], b0.values()[4 - i]);
        EXPECT_DOUBLE_EQ(b1.d1()[i], -b0.d1()[4 - i]);
    }
    EXPECT_NEAR(sum(eval_bernstein_ders(5, 0.3, 0).values()), 1.0, 1e-15);
    EXPECT_THROW(eval_bernstein_ders(4, 1.5, 0), OutOfDomainError);
    EXPECT_THROW(eval_bernstein_ders(0, 0.5, 0), std::invalid_argument);
}

TEST(Bernstein, AgreesWithSingleElementCoxDeBoor)
{
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int q = 2; q <= 7; ++q) {
        const KnotVector kv = make_open_uniform(1, q);
        for (int s = 0; s < 40; ++s) {
            const double t = s < 2 ? static_cast<double>(s) : u(rng);
            const BasisEval a = eval_bernstein_ders(q, t, 4);
            const BasisEval b = eval_ders(kv, t, 4);
            for (int k = 0; k <= 4; ++k)
                for (int i = 0; i <= q; ++i)
                    EXPECT_NEAR(a.ders[k][i], b.ders[k][i], 1e-12 * std::max(1.0, std::abs(b.ders[k][i])));
        }
    }
}

TEST(TensorEval, CornerInteriorAndProductRule)
{
    const KnotVector kx = make_open_uniform(4, 3);
    const KnotVector ky = make_open_uniform(3, 4);

    const TensorEval corner = tensor_eval(kx, ky, 0.0, 0.0);
    int nonzero = 0;
    for (double v : corner.value) {
        if (std::abs(v) > 1e-15) {
            ++nonzero;
            EXPECT_NEAR(v, 1.0, 1e-15);
        }
    }
    EXPECT_EQ(nonzero, 1);

    const double x = 0.37, y = 0.81;
    const TensorEval t = tensor_eval(kx, ky, x, y);
    EXPECT_NEAR(sum(t.value), 1.0, 1e-12);
    EXPECT_NEAR(sum(t.dx), 0.0, 1e-10);
    EXPECT_NEAR(sum(t.dy), 0.0, 1e-10);

    const BasisEval bx = eval_ders(kx, x, 2);
    const BasisEval by = eval_ders(ky, y, 2);
    for (int jj = 0; jj < t.ny; ++jj)
        for (int ii = 0; ii < t.nx; ++ii)
            EXPECT_DOUBLE_EQ(t.dxy[jj * t.nx + ii], bx.d1()[ii] * by.d1()[jj]);
    EXPECT_THROW(tensor_eval(kx, ky, 1.2, 0.5), OutOfDomainError);
}

TEST(DyadicRefine, InsertsMidpoints)
{
    const KnotVector once = dyadic_refine(make_open_uniform(1, 3));
    EXPECT_EQ(once.knots(), (std::vector<double>{0, 0, 0, 0, 0.5, 1, 1, 1, 1}));
    const KnotVector twice = dyadic_refine(once);
    EXPECT_EQ(twice.num_elements(), 4);
    EXPECT_EQ(twice.num_functions(), 7);
    const KnotVector kv = make_open_uniform(5, 4);
    EXPECT_EQ(dyadic_refine(kv).num_functions(), kv.num_functions() + kv.num_elements());
}

TEST(DyadicRefine, CoarseSplinesAreReproduced)
{
    std::mt19937 rng(5);
    std::normal_distribution<double> coef(0.0, 1.0);
    for (const KnotVector& kv : sample_knot_vectors()) {
        const KnotVector fine = dyadic_refine(kv);
        Eigen::VectorXd c(kv.num_functions());
        for (auto& v : c) v = coef(rng);
        const int m = 50;
        Eigen::MatrixXd B = Eigen::MatrixXd::Zero(m, fine.num_functions());
        Eigen::VectorXd rhs(m);
        for (int s = 0; s < m; ++s) {
            const double x = kv.front() + (kv.back() - kv.front()) * (s + 0.5) / m;
            const BasisEval bc = eval_ders(kv, x, 0);
            rhs[s] = 0.0;
            for (std::size_t k = 0; k < bc.size(); ++k) rhs[s] += c[bc.first_index + k] * bc.values()[k];
            const BasisEval bf = eval_ders(fine, x, 0);
            for (std::size_t k = 0; k < bf.size(); ++k) B(s, bf.first_index + k) = bf.values()[k];
        }
        const Eigen::VectorXd fit = B.colPivHouseholderQr().solve(rhs);
        EXPECT_LE((B * fit - rhs).norm(), 1e-10);
    }
}
