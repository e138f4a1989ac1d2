#pragma once

#include <string>
#include <vector>

#include "megdec/tensor.hpp"

namespace megdec {

/// One agglomeration step. Node ids: 0..leaves-1 are leaves, the merge at
/// position m creates node leaves+m.
struct ClusterMerge {
    int a = 0;
    int b = 0;
    double height = 0.0;
    int size = 0;  // leaves under the new node
};

struct ClusterTree {
    int leaves = 0;
    std::vector<ClusterMerge> merges;
};

/// Bottom-up average-linkage (UPGMA) clustering of the rows of `points`
/// under Euclidean distance, via the Lance-Williams update. Ties pick the
/// lexicographically lowest active id pair.
ClusterTree upgma(const RowMatrix<double>& points);

/// Left-to-right leaf order induced by the merge sequence (dendrogram
/// layout order).
std::vector<int> cluster_leaf_order(const ClusterTree& tree);

void write_cluster_tree(const ClusterTree& tree, const std::string& path);

}  // namespace megdec
