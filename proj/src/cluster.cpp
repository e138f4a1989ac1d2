#include "megdec/cluster.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "megdec/csv.hpp"

namespace megdec {

ClusterTree upgma(const RowMatrix<double>& points) {
    int n = int(points.rows());
    if (n < 1) throw UsageError("upgma: no items to cluster");
    ClusterTree tree;
    tree.leaves = n;
    if (n == 1) return tree;

    int total = 2 * n - 1;
    RowMatrix<double> d = RowMatrix<double>::Zero(total, total);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            double dist = (points.row(i) - points.row(j)).norm();
            d(i, j) = d(j, i) = dist;
        }
    }
    std::vector<int> size(size_t(total), 1);
    std::vector<bool> active(size_t(total), false);
    for (int i = 0; i < n; ++i) active[size_t(i)] = true;

    for (int step = 0; step < n - 1; ++step) {
        int bi = -1, bj = -1;
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < n + step; ++i) {
            if (!active[size_t(i)]) continue;
            for (int j = i + 1; j < n + step; ++j) {
                if (!active[size_t(j)]) continue;
                if (d(i, j) < best) {  // ties keep the lowest (i, j) pair
                    best = d(i, j);
                    bi = i;
                    bj = j;
                }
            }
        }
        int node = n + step;
        // average linkage via Lance-Williams: exact mean pairwise distance
        for (int k = 0; k < node; ++k) {
            if (!active[size_t(k)] || k == bi || k == bj) continue;
            double dk = (size[size_t(bi)] * d(bi, k) + size[size_t(bj)] * d(bj, k)) /
                        double(size[size_t(bi)] + size[size_t(bj)]);
            d(node, k) = d(k, node) = dk;
        }
        size[size_t(node)] = size[size_t(bi)] + size[size_t(bj)];
        active[size_t(bi)] = active[size_t(bj)] = false;
        active[size_t(node)] = true;
        tree.merges.push_back({bi, bj, best, size[size_t(node)]});
    }
    return tree;
}

std::vector<int> cluster_leaf_order(const ClusterTree& tree) {
    std::vector<int> order;
    if (tree.leaves == 0) return order;
    if (tree.merges.empty()) {
        order.push_back(0);
        return order;
    }
    // iterative DFS from the root, left child first
    std::vector<int> stack = {tree.leaves + int(tree.merges.size()) - 1};
    while (!stack.empty()) {
        int node = stack.back();
        stack.pop_back();
        if (node < tree.leaves) {
            order.push_back(node);
        } else {
            const ClusterMerge& m = tree.merges[size_t(node - tree.leaves)];
            stack.push_back(m.b);
            stack.push_back(m.a);
        }
    }
    return order;
}

void write_cluster_tree(const ClusterTree& tree, const std::string& path) {
    std::ostringstream os;
    os << "merge,node_a,node_b,height,size\n" << std::setprecision(12);
    for (size_t i = 0; i < tree.merges.size(); ++i) {
        const auto& m = tree.merges[i];
        os << i << ',' << m.a << ',' << m.b << ',' << m.height << ',' << m.size << '\n';
    }
    write_text_file(path, os.str());
}

}  // namespace megdec
