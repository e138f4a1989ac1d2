#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <vector>

#include "support.hpp"
#include "megdec/cluster.hpp"

using namespace megdec;

namespace {

/// Definition-level UPGMA: clusters carry explicit member lists and every
/// inter-cluster distance is recomputed as the mean pairwise point distance,
/// with the same node numbering and tie rule as the production code.
ClusterTree brute_force_upgma(const RowMatrix<double>& points) {
    int n = int(points.rows());
    ClusterTree tree;
    tree.leaves = n;
    RowMatrix<double> d0(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) d0(i, j) = (points.row(i) - points.row(j)).norm();

    std::vector<std::vector<int>> members(size_t(2 * n - 1));
    std::vector<bool> active(size_t(2 * n - 1), false);
    for (int i = 0; i < n; ++i) {
        members[size_t(i)] = {i};
        active[size_t(i)] = true;
    }

    auto mean_dist = [&](int a, int b) {
        double sum = 0;
        for (int p : members[size_t(a)])
            for (int q : members[size_t(b)]) sum += d0(p, q);
        return sum / double(members[size_t(a)].size() * members[size_t(b)].size());
    };

    for (int step = 0; step < n - 1; ++step) {
        int bi = -1, bj = -1;
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < n + step; ++i) {
            if (!active[size_t(i)]) continue;
            for (int j = i + 1; j < n + step; ++j) {
                if (!active[size_t(j)]) continue;
                double dij = mean_dist(i, j);
                if (dij < best) {
                    best = dij;
                    bi = i;
                    bj = j;
                }
            }
        }
        int node = n + step;
        members[size_t(node)] = members[size_t(bi)];
        members[size_t(node)].insert(members[size_t(node)].end(), members[size_t(bj)].begin(),
                                     members[size_t(bj)].end());
        active[size_t(bi)] = active[size_t(bj)] = false;
        active[size_t(node)] = true;
        tree.merges.push_back({bi, bj, best, int(members[size_t(node)].size())});
    }
    return tree;
}

std::set<int> subtree_leaves(const ClusterTree& tree, int node) {
    std::set<int> out;
    std::vector<int> stack = {node};
    while (!stack.empty()) {
        int k = stack.back();
        stack.pop_back();
        if (k < tree.leaves) {
            out.insert(k);
        } else {
            const auto& m = tree.merges[size_t(k - tree.leaves)];
            stack.push_back(m.a);
            stack.push_back(m.b);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("upgma reproduces the brute-force merge sequence on random 8x8 inputs") {
    for (uint64_t seed : {3u, 14u, 15u, 92u, 65u}) {
        CAPTURE(seed);
        Rng rng(seed);
        RowMatrix<double> pts(8, 3);
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 3; ++j) pts(i, j) = rng.uniform(-1.0, 1.0);

        ClusterTree got = upgma(pts);
        ClusterTree want = brute_force_upgma(pts);
        REQUIRE(got.merges.size() == want.merges.size());
        for (size_t m = 0; m < got.merges.size(); ++m) {
            CHECK(got.merges[m].a == want.merges[m].a);
            CHECK(got.merges[m].b == want.merges[m].b);
            CHECK(got.merges[m].size == want.merges[m].size);
            CHECK(std::abs(got.merges[m].height - want.merges[m].height) < 1e-9);
        }
    }
}

TEST_CASE("merge heights never decrease") {
    Rng rng(77);
    RowMatrix<double> pts(12, 4);
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 4; ++j) pts(i, j) = rng.uniform(-3.0, 3.0);
    ClusterTree tree = upgma(pts);
    for (size_t m = 1; m < tree.merges.size(); ++m) {
        CHECK(tree.merges[m].height >= tree.merges[m - 1].height);
    }
    CHECK(tree.merges.back().size == 12);
}

TEST_CASE("two separated blocks meet only at the top merge") {
    RowMatrix<double> pts(8, 2);
    Rng rng(8);
    for (int i = 0; i < 4; ++i) {
        pts(i, 0) = rng.uniform(-0.5, 0.5);
        pts(i, 1) = rng.uniform(-0.5, 0.5);
        pts(i + 4, 0) = 100.0 + rng.uniform(-0.5, 0.5);
        pts(i + 4, 1) = rng.uniform(-0.5, 0.5);
    }
    ClusterTree tree = upgma(pts);
    const ClusterMerge& top = tree.merges.back();
    std::set<int> left = subtree_leaves(tree, top.a);
    std::set<int> right = subtree_leaves(tree, top.b);
    std::set<int> low = {0, 1, 2, 3}, high = {4, 5, 6, 7};
    bool split_clean = (left == low && right == high) || (left == high && right == low);
    CHECK(split_clean);
    CHECK(top.height > 99.0);
    CHECK(tree.merges[tree.merges.size() - 2].height < 2.0);

    // The leaf order keeps each block contiguous.
    auto order = cluster_leaf_order(tree);
    REQUIRE(order.size() == 8);
    std::set<int> first_half(order.begin(), order.begin() + 4);
    CHECK((first_half == low || first_half == high));
}

TEST_CASE("ties pick the lexicographically lowest active pair") {
    RowMatrix<double> pts = RowMatrix<double>::Zero(4, 2);  // all distances zero
    ClusterTree tree = upgma(pts);
    REQUIRE(tree.merges.size() == 3);
    CHECK(tree.merges[0].a == 0);
    CHECK(tree.merges[0].b == 1);
    CHECK(tree.merges[1].a == 2);
    CHECK(tree.merges[1].b == 3);
    CHECK(tree.merges[2].a == 4);
    CHECK(tree.merges[2].b == 5);
    for (const auto& m : tree.merges) CHECK(m.height == 0.0);
}

TEST_CASE("leaf order is a permutation consistent with the merges") {
    Rng rng(31);
    RowMatrix<double> pts(9, 3);
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 3; ++j) pts(i, j) = rng.uniform(0.0, 1.0);
    ClusterTree tree = upgma(pts);
    auto order = cluster_leaf_order(tree);
    std::set<int> seen(order.begin(), order.end());
    CHECK(order.size() == 9);
    CHECK(seen.size() == 9);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == 8);

    // Every internal node spans a contiguous run of the layout order.
    for (size_t m = 0; m < tree.merges.size(); ++m) {
        std::set<int> leaves = subtree_leaves(tree, tree.leaves + int(m));
        std::vector<int> positions;
        for (size_t p = 0; p < order.size(); ++p) {
            if (leaves.count(order[p])) positions.push_back(int(p));
        }
        CHECK(positions.back() - positions.front() + 1 == int(positions.size()));
    }
}

TEST_CASE("degenerate inputs") {
    CHECK_THROWS_AS(upgma(RowMatrix<double>(0, 3)), UsageError);

    RowMatrix<double> one(1, 3);
    one << 1, 2, 3;
    ClusterTree tree = upgma(one);
    CHECK(tree.leaves == 1);
    CHECK(tree.merges.empty());
    CHECK(cluster_leaf_order(tree) == std::vector<int>{0});
}

TEST_CASE("cluster tree files list merges with stable columns") {
    auto dir = megtest::scratch_dir("cluster_tree");
    RowMatrix<double> pts(3, 1);
    pts << 0.0, 1.0, 10.0;
    ClusterTree tree = upgma(pts);
    std::string path = (dir / "tree.csv").string();
    write_cluster_tree(tree, path);

    std::ifstream in(path);
    std::string header, r1, r2;
    std::getline(in, header);
    std::getline(in, r1);
    std::getline(in, r2);
    CHECK(header == "merge,node_a,node_b,height,size");
    CHECK(r1 == "0,0,1,1,2");
    CHECK(r2 == "1,2,3,9.5,3");  // mean of d(2,0)=10 and d(2,1)=9
}
