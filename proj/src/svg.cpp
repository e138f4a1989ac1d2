#include "megdec/svg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "megdec/csv.hpp"

namespace megdec {

namespace {

struct Rgb {
    double r, g, b;
};

// compact viridis ramp
constexpr Rgb kRamp[] = {
    {0.267, 0.005, 0.329}, {0.254, 0.265, 0.530}, {0.164, 0.471, 0.558},
    {0.135, 0.659, 0.518}, {0.478, 0.821, 0.318}, {0.993, 0.906, 0.144},
};

std::string color_of(double v) {
    v = std::clamp(v, 0.0, 1.0);
    constexpr int n = int(sizeof(kRamp) / sizeof(kRamp[0])) - 1;
    double pos = v * n;
    int i = std::min(n - 1, int(pos));
    double f = pos - i;
    auto mix = [&](double a, double b) { return int(std::round(255.0 * (a + f * (b - a)))); };
    std::ostringstream os;
    os << "rgb(" << mix(kRamp[i].r, kRamp[i + 1].r) << ',' << mix(kRamp[i].g, kRamp[i + 1].g)
       << ',' << mix(kRamp[i].b, kRamp[i + 1].b) << ')';
    return os.str();
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

struct NodeGeom {
    double slot = 0;   // leaf-axis coordinate, in cell units
    double height = 0; // merge height
};

/// Slot/height geometry for every node of a dendrogram whose leaves are
/// laid out in tree leaf order.
std::vector<NodeGeom> dendro_geometry(const ClusterTree& tree, const std::vector<int>& order) {
    std::vector<NodeGeom> geom(size_t(tree.leaves) + tree.merges.size());
    for (size_t pos = 0; pos < order.size(); ++pos) {
        geom[size_t(order[pos])].slot = double(pos) + 0.5;
    }
    for (size_t i = 0; i < tree.merges.size(); ++i) {
        const auto& m = tree.merges[i];
        NodeGeom& g = geom[size_t(tree.leaves) + i];
        g.slot = 0.5 * (geom[size_t(m.a)].slot + geom[size_t(m.b)].slot);
        g.height = m.height;
    }
    return geom;
}

void emit_dendrogram(std::ostringstream& svg, const ClusterTree& tree,
                     const std::vector<int>& order, double cell, double span, bool rows,
                     double x0, double y0) {
    if (tree.merges.empty()) return;
    double hmax = 0;
    for (const auto& m : tree.merges) hmax = std::max(hmax, m.height);
    if (hmax <= 0) hmax = 1;
    auto geom = dendro_geometry(tree, order);
    // leaves sit at depth = span (touching the heatmap), the root at 0
    auto depth = [&](double h) { return span * (1.0 - h / hmax); };
    svg << "<g fill=\"none\" stroke=\"#555\" stroke-width=\"1\">\n";
    for (size_t i = 0; i < tree.merges.size(); ++i) {
        const auto& m = tree.merges[i];
        const NodeGeom& a = geom[size_t(m.a)];
        const NodeGeom& b = geom[size_t(m.b)];
        double dm = depth(tree.merges[i].height);
        double da = depth(a.height), db = depth(b.height);
        double sa = a.slot * cell, sb = b.slot * cell;
        if (rows) {
            // depth runs along x, slots along y
            svg << "<path d=\"M" << x0 + da << ' ' << y0 + sa << " L" << x0 + dm << ' '
                << y0 + sa << " L" << x0 + dm << ' ' << y0 + sb << " L" << x0 + db << ' '
                << y0 + sb << "\"/>\n";
        } else {
            svg << "<path d=\"M" << x0 + sa << ' ' << y0 + da << " L" << x0 + sa << ' '
                << y0 + dm << " L" << x0 + sb << ' ' << y0 + dm << " L" << x0 + sb << ' '
                << y0 + db << "\"/>\n";
        }
    }
    svg << "</g>\n";
}

}  // namespace

std::string render_clustermap_svg(const SaliencyMatrix& matrix, const ClusterTree& row_tree,
                                  const ClusterTree& col_tree) {
    Index L = matrix.values.rows();
    Index C = matrix.values.cols();
    if (row_tree.leaves != int(L) || col_tree.leaves != int(C)) {
        throw DimensionError("clustermap: tree leaf counts do not match the matrix");
    }
    auto row_order = cluster_leaf_order(row_tree);
    auto col_order = cluster_leaf_order(col_tree);

    const double cell = 16.0;
    const double dendro = 70.0;
    const double gap = 4.0;
    const double label_w = 110.0;
    const double label_h = 46.0;
    const double hx = dendro + gap;          // heatmap origin
    const double hy = dendro + gap;
    const double width = hx + C * cell + label_w;
    const double height = hy + L * cell + label_h;

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    emit_dendrogram(svg, row_tree, row_order, cell, dendro, true, 0.0, hy);
    emit_dendrogram(svg, col_tree, col_order, cell, dendro, false, hx, 0.0);

    svg << std::fixed;
    svg.precision(1);
    for (Index r = 0; r < L; ++r) {
        for (Index c = 0; c < C; ++c) {
            double v = matrix.values(row_order[size_t(r)], col_order[size_t(c)]);
            std::string fill = std::isnan(v) ? "#dddddd" : color_of(v);
            svg << "<rect x=\"" << hx + c * cell << "\" y=\"" << hy + r * cell << "\" width=\""
                << cell << "\" height=\"" << cell << "\" fill=\"" << fill << "\"/>\n";
        }
    }

    svg << "<g font-family=\"sans-serif\" font-size=\"10\" fill=\"#222\">\n";
    for (Index r = 0; r < L; ++r) {
        svg << "<text x=\"" << hx + C * cell + 6 << "\" y=\"" << hy + r * cell + cell * 0.7
            << "\">" << xml_escape(matrix.layer_names[size_t(row_order[size_t(r)])])
            << "</text>\n";
    }
    for (Index c = 0; c < C; ++c) {
        double tx = hx + c * cell + cell * 0.7;
        double ty = hy + L * cell + 6;
        svg << "<text x=\"" << tx << "\" y=\"" << ty << "\" transform=\"rotate(90 " << tx << ' '
            << ty << ")\">" << xml_escape(matrix.phoneme_symbols[size_t(col_order[size_t(c)])])
            << "</text>\n";
    }
    svg << "</g>\n</svg>\n";
    return svg.str();
}

void write_clustermap_svg(const SaliencyMatrix& matrix, const ClusterTree& row_tree,
                          const ClusterTree& col_tree, const std::string& path) {
    write_text_file(path, render_clustermap_svg(matrix, row_tree, col_tree));
}

}  // namespace megdec
