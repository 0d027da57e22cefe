#include "hbplate/hb_space.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

using namespace hbplate;
using namespace hbtest;

namespace {

std::set<FunctionId> as_set(const HierarchicalBasis& basis)
{
    return {basis.functions().begin(), basis.functions().end()};
}

int numerical_rank(const Eigen::MatrixXd& B)
{
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(B);
    qr.setThreshold(1e-10);
    return static_cast<int>(qr.rank());
}

} // namespace

TEST(Init, DofAndElementCounts)
{
    const auto a = init(4, 3);
    EXPECT_EQ(a.mesh.num_active(), 16u);
    EXPECT_EQ(a.basis.size(), 49u);
    const auto b = init(1, 4);
    EXPECT_EQ(b.mesh.num_active(), 1u);
    EXPECT_EQ(b.basis.size(), 25u);
    const auto c = init(8, 5);
    EXPECT_EQ(c.mesh.num_active(), 64u);
    EXPECT_EQ(c.basis.size(), 169u);
    EXPECT_THROW(init(4, 2), UnsupportedDegreeError);
    EXPECT_THROW(init(0, 3), std::invalid_argument);
}

TEST(Basis, DofNumberingIsBijective)
{
    auto sp = init(3, 3);
    const std::vector<ElementId> marks{{0, 1, 1}};
    const HierarchicalMesh m = refine(sp.mesh, marks, 2);
    const HierarchicalBasis basis = rebuild_basis(m);
    for (int d = 0; d < static_cast<int>(basis.size()); ++d) EXPECT_EQ(basis.dof(basis.function(d)), d);
    EXPECT_EQ(basis.dof({0, 100, 100}), -1);
    EXPECT_EQ(basis.dof({7, 0, 0}), -1);
}

TEST(Basis, UniformRefinementGivesFinestTensorBasis)
{
    for (int p = 3; p <= 5; ++p) {
        auto sp = init(3, p);
        HierarchicalMesh m = refine_uniform(sp.mesh, p - 1);
        m = refine_uniform(m, p - 1);
        const HierarchicalBasis basis = rebuild_basis(m);
        const int n = 12 + p;
        EXPECT_EQ(basis.size(), static_cast<std::size_t>(n * n));
        for (const FunctionId& f : basis.functions()) EXPECT_EQ(f.level, 2);
    }
}

TEST(Basis, CornerBlockMatchesSetDefinition)
{
    auto sp = init(4, 3);
    const std::vector<ElementId> marks{{0, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 1, 1}};
    const HierarchicalMesh m = refine(sp.mesh, marks, 2);
    const HierarchicalBasis basis = rebuild_basis(m);
    const auto oracle = brute_force_basis(m);
    EXPECT_EQ(as_set(basis), oracle);
    // level-0 functions supported inside the block are replaced by the 4x4 level-1 ones there
    int level0 = 0, level1 = 0;
    for (const FunctionId& f : basis.functions()) (f.level == 0 ? level0 : level1)++;
    EXPECT_EQ(level0, 49 - 4);
    EXPECT_EQ(level1, 16);
}

TEST(Basis, RandomMeshesMatchSetDefinitionAndAreIndependent)
{
    std::mt19937 rng(42);
    for (int trial = 0; trial < 12; ++trial) {
        const int p = 3 + trial % 2;
        HierarchicalMesh m(2, p, 4);
        for (int step = 0; step < 3; ++step) m = refine(m, random_marks(m, rng, 0.3), p - 1);
        const HierarchicalBasis basis = rebuild_basis(m);
        ASSERT_EQ(as_set(basis), brute_force_basis(m));
        if (basis.size() <= 400) {
            const Eigen::MatrixXd B = sample_matrix(m, basis, 64);
            EXPECT_EQ(numerical_rank(B), static_cast<int>(basis.size()));
        }
    }
}

TEST(Refine, SingleInteriorElementNeedsNoClosure)
{
    for (int m : {2, 3}) {
        auto sp = init(4, 3);
        const std::vector<ElementId> marks{{0, 1, 2}};
        const HierarchicalMesh r = refine(sp.mesh, marks, m);
        EXPECT_EQ(r.num_active(), 16u - 1 + 4);
        for (int dj = 0; dj < 2; ++dj)
            for (int di = 0; di < 2; ++di) EXPECT_TRUE(r.is_active({1, 2 + di, 4 + dj}));
        EXPECT_TRUE(r.is_refined({0, 1, 2}));
        EXPECT_FALSE(sp.mesh.is_refined({0, 1, 2}));
    }
}

TEST(Refine, MarkAllQuadruplesElements)
{
    auto sp = init(3, 4);
    const HierarchicalMesh r = refine_uniform(sp.mesh, 3);
    EXPECT_EQ(r.num_active(), 36u);
    EXPECT_EQ(refine_uniform(r, 3).num_active(), 144u);
}

TEST(Refine, RepeatedCornerMarkingStaysAdmissible)
{
    for (int m : {2, 3}) {
        auto sp = init(4, 3);
        HierarchicalMesh mesh = sp.mesh;
        for (int step = 0; step < 5; ++step) {
            const std::vector<ElementId> marks{mesh.locate(0.0, 0.0)};
            mesh = refine(mesh, marks, m);
            EXPECT_TRUE(check_admissible(mesh, m)) << "m=" << m << " step=" << step;
            EXPECT_NEAR(mesh.active_area(), 1.0, 1e-12);
        }
        EXPECT_EQ(mesh.locate(0.0, 0.0).level, 5);
    }
}

TEST(Refine, RandomSequencesPreservePartitionAndAdmissibility)
{
    std::mt19937 rng(2024);
    for (int seq = 0; seq < 100; ++seq) {
        const int p = 3 + seq % 3;
        const int m = 2 + seq % 2;
        HierarchicalMesh mesh(1 + seq % 3, p, 4);
        for (int step = 0; step < 4; ++step) {
            mesh = refine(mesh, random_marks(mesh, rng, 0.15), m);
            ASSERT_NEAR(mesh.active_area(), 1.0, 1e-12);
            ASSERT_TRUE(nested_partition(mesh));
            ASSERT_TRUE(check_admissible(mesh, m)) << "seq " << seq << " step " << step;
        }
    }
}

TEST(Refine, Errors)
{
    HierarchicalMesh mesh(2, 3, 1);
    const std::vector<ElementId> bad{{0, 5, 5}};
    EXPECT_THROW(refine(mesh, bad, 2), std::invalid_argument);
    const std::vector<ElementId> ok{{0, 0, 0}};
    EXPECT_THROW(refine(mesh, ok, 1), std::invalid_argument);
    mesh = refine(mesh, ok, 2);
    const std::vector<ElementId> deep{{1, 0, 0}};
    EXPECT_THROW(refine(mesh, deep, 2), RefinementError);
}

TEST(Refine, NestedSpacesReproduceCoarseFields)
{
    std::mt19937 rng(9);
    std::normal_distribution<double> coef(0.0, 1.0);
    HierarchicalMesh mesh(2, 3, 4);
    for (int step = 0; step < 3; ++step) {
        const HierarchicalBasis coarse = rebuild_basis(mesh);
        const HierarchicalMesh next = refine(mesh, random_marks(mesh, rng, 0.3), 2);
        const HierarchicalBasis fine = rebuild_basis(next);
        Eigen::VectorXd c(static_cast<int>(coarse.size()));
        for (auto& v : c) v = coef(rng);
        const Eigen::VectorXd target = sample_matrix(mesh, coarse, 50) * c;
        const Eigen::MatrixXd B = sample_matrix(next, fine, 50);
        const Eigen::VectorXd fit = B.colPivHouseholderQr().solve(target);
        EXPECT_LE((B * fit - target).norm(), 1e-9 * std::max(1.0, target.norm()));
        mesh = next;
    }
}

TEST(Admissibility, SingleAndTwoLevelMeshes)
{
    auto sp = init(4, 3);
    EXPECT_TRUE(check_admissible(sp.mesh, 2));
    HierarchicalMesh m = sp.mesh;
    m.split({0, 2, 2});
    EXPECT_TRUE(check_admissible(m, 2));
}

TEST(Admissibility, SplittingWithoutClosureCanViolate)
{
    HierarchicalMesh m(4, 3);
    m.split({0, 0, 0});
    m.split({1, 0, 0});
    m.split({2, 0, 0});
    EXPECT_FALSE(check_admissible(m, 2));
    EXPECT_TRUE(check_admissible(m, 4));
}

TEST(Connectivity, MatchesSupportOverlap)
{
    std::mt19937 rng(77);
    HierarchicalMesh mesh(2, 3, 4);
    for (int step = 0; step < 3; ++step) mesh = refine(mesh, random_marks(mesh, rng, 0.3), 2);
    const HierarchicalBasis basis = rebuild_basis(mesh);
    for (const ElementId& e : mesh.active_elements()) {
        std::set<FunctionId> expected;
        for (const FunctionId& f : basis.functions())
            if (overlaps(support_box(mesh, f), mesh.bounds(e))) expected.insert(f);
        std::set<FunctionId> got;
        for (const LocalFunction& lf : connectivity(mesh, basis, e)) {
            got.insert(lf.id);
            EXPECT_EQ(basis.dof(lf.id), lf.dof);
            EXPECT_GE(lf.id.level, e.level - 1);
        }
        EXPECT_EQ(got, expected);
        EXPECT_LE(got.size(), 2u * 16u);
    }
    const auto single = init(4, 3);
    EXPECT_EQ(connectivity(single.mesh, single.basis, {0, 1, 1}).size(), 16u);
}

TEST(Neighbors, EightNeighborhood)
{
    auto sp = init(4, 3);
    EXPECT_EQ(neighbors(sp.mesh, {0, 1, 1}).size(), 8u);
    EXPECT_EQ(neighbors(sp.mesh, {0, 0, 0}).size(), 3u);
    EXPECT_EQ(neighbors(sp.mesh, {0, 0, 2}).size(), 5u);
    HierarchicalMesh m = sp.mesh;
    m.split({0, 2, 2});
    m.split({0, 0, 0});
    const auto n = neighbors(m, {0, 1, 1});
    EXPECT_EQ(n.size(), 6u);
    for (const ElementId& e : n) EXPECT_TRUE(m.is_active(e));
}

TEST(FaceNeighbors, MatchBruteForceAdjacency)
{
    std::mt19937 rng(5);
    HierarchicalMesh mesh(2, 3, 5);
    for (int step = 0; step < 4; ++step) mesh = refine(mesh, random_marks(mesh, rng, 0.25), 2);
    const auto all = mesh.active_elements();
    for (const ElementId& e : all) {
        const Box b = mesh.bounds(e);
        for (Side s : all_sides) {
            std::vector<ElementId> expected;
            for (const ElementId& o : all) {
                const Box c = mesh.bounds(o);
                bool touch = false;
                switch (s) {
                case Side::left: touch = c.x1 == b.x0 && std::min(c.y1, b.y1) > std::max(c.y0, b.y0); break;
                case Side::right: touch = c.x0 == b.x1 && std::min(c.y1, b.y1) > std::max(c.y0, b.y0); break;
                case Side::bottom: touch = c.y1 == b.y0 && std::min(c.x1, b.x1) > std::max(c.x0, b.x0); break;
                case Side::top: touch = c.y0 == b.y1 && std::min(c.x1, b.x1) > std::max(c.x0, b.x0); break;
                }
                if (touch) expected.push_back(o);
            }
            std::sort(expected.begin(), expected.end());
            EXPECT_EQ(mesh.face_neighbors(e, s), expected);
        }
    }
}

TEST(Locate, FindsContainingElement)
{
    std::mt19937 rng(6);
    HierarchicalMesh mesh(3, 3, 5);
    for (int step = 0; step < 3; ++step) mesh = refine(mesh, random_marks(mesh, rng, 0.3), 2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int s = 0; s < 200; ++s) {
        const double x = u(rng), y = u(rng);
        const ElementId e = mesh.locate(x, y);
        const Box b = mesh.bounds(e);
        EXPECT_TRUE(mesh.is_active(e));
        EXPECT_TRUE(b.x0 <= x && x <= b.x1 && b.y0 <= y && y <= b.y1);
    }
    EXPECT_NO_THROW((void)mesh.locate(1.0, 1.0));
    EXPECT_THROW((void)mesh.locate(1.01, 0.5), OutOfDomainError);
}

TEST(DumpMesh, OneLinePerActiveElement)
{
    auto sp = init(2, 3);
    const std::vector<ElementId> marks{{0, 1, 1}};
    const HierarchicalMesh m = refine(sp.mesh, marks, 2);
    std::ostringstream os;
    dump_mesh(m, os);
    const std::string s = os.str();
    EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 7);
    EXPECT_EQ(s.substr(0, s.find('\n')), "0 0 0 0.5 0.5");
    EXPECT_NE(s.find("1 0.5 0.5 0.75 0.75\n"), std::string::npos);
}
