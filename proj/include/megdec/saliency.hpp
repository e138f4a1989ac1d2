#pragma once

#include <string>
#include <vector>

#include "megdec/dataset.hpp"
#include "megdec/model.hpp"

namespace megdec {

/// Layers x classes score grid. Cells for classes absent from the source
/// split are NaN and carried as missing through normalization and export.
struct SaliencyMatrix {
    std::vector<std::string> layer_names;
    std::vector<std::string> phoneme_symbols;
    RowMatrix<double> values;
    bool normalized = false;
};

enum class CorrMetric { pearson, spearman };

std::string corr_metric_name(CorrMetric m);

struct SimilarityMatrix {
    std::vector<std::string> layer_names;
    std::vector<std::string> phoneme_symbols;
    RowMatrix<double> values;  // NaN marks degenerate (zero-variance) pairs
    CorrMetric metric = CorrMetric::pearson;
};

struct SimilaritySummary {
    double mean = 0.0;
    double stddev = 0.0;  // population
    long long cells = 0;
    long long missing = 0;
};

/// Per-layer mean absolute gradient of the true-class logit with respect
/// to each tapped activation, for one ungrouped window.
std::vector<double> sample_saliency(Model& model, const RowMatrixXf& window, int label);

std::vector<std::string> saliency_layer_names(Model& model);

/// Class-averaged saliency over one split: cell [l][c] is the mean of
/// per-sample layer scores over (up to max_per_class) windows of class c.
SaliencyMatrix class_saliency(Model& model, const Dataset& ds, Split split,
                              int max_per_class = 200);

/// Row-wise (v - min) / (max - min); constant rows map to zeros.
SaliencyMatrix row_minmax(const SaliencyMatrix& s);

/// Pearson or Spearman correlation per (layer, class) between paired
/// per-sample saliency sequences from two splits holding the same windows
/// under different standardization. Pairing is by within-class order;
/// mismatched class counts are a usage error.
SimilarityMatrix cross_split_similarity(Model& model, const Dataset& ds, Split a, Split b,
                                        CorrMetric metric, int max_per_class = 200);

/// Mean and population std over non-missing cells.
SimilaritySummary summarize_similarity(const SimilarityMatrix& m);

double pearson_corr(const std::vector<double>& x, const std::vector<double>& y);
double spearman_corr(const std::vector<double>& x, const std::vector<double>& y);

void write_saliency_csv(const SaliencyMatrix& m, const std::string& path);
void write_similarity_csv(const SimilarityMatrix& m, const std::string& path);

}  // namespace megdec
