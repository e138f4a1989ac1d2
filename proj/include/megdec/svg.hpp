#pragma once

#include <string>

#include "megdec/cluster.hpp"
#include "megdec/saliency.hpp"

namespace megdec {

/// Heatmap of the (normalized) saliency matrix with row and column
/// dendrograms, rows and columns permuted to the cluster leaf orders.
std::string render_clustermap_svg(const SaliencyMatrix& matrix, const ClusterTree& row_tree,
                                  const ClusterTree& col_tree);

void write_clustermap_svg(const SaliencyMatrix& matrix, const ClusterTree& row_tree,
                          const ClusterTree& col_tree, const std::string& path);

}  // namespace megdec
