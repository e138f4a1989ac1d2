#include "megdec/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "megdec/csv.hpp"

namespace megdec {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

/// Per-sample, per-layer mean |d z_label / d activation| for a whole batch
/// in one tape: the loss is the sum of each sample's own true-class logit,
/// and batch items are independent in eval mode, so the batched gradient
/// slices equal the one-sample gradients.
std::vector<std::vector<double>> batch_saliency(Model& model,
                                                const std::vector<const RowMatrixXf*>& windows,
                                                const std::vector<int>& labels) {
    size_t n = windows.size();
    Index C = windows[0]->rows(), T = windows[0]->cols();
    Tensorf batch = Tensorf::zeros({Index(n), C, T});
    for (size_t i = 0; i < n; ++i) {
        Eigen::Map<RowMatrix<float>>(batch.array().data() + Index(i) * C * T, C, T) = *windows[i];
    }
    TapRegistry<float> taps;
    Tensorf logits = model.forward(batch, false, &taps);
    if (taps.size() == 0) throw UsageError("saliency: model produced no tapped activations");

    Tensorf mask = Tensorf::zeros({Index(n), Index(model.spec().n_classes)});
    for (size_t i = 0; i < n; ++i) {
        int lab = labels[i];
        if (lab < 0 || lab >= model.spec().n_classes) {
            throw UsageError("saliency: label " + std::to_string(lab) + " out of range");
        }
        mask.array()[Index(i) * model.spec().n_classes + lab] = 1.0f;
    }
    Tensorf target = sum_all(mul(logits, mask));
    backward(target);

    std::vector<std::vector<double>> scores(n, std::vector<double>(taps.size(), 0.0));
    for (size_t l = 0; l < taps.size(); ++l) {
        const Tensorf& act = taps.taps()[l].value;
        Index per = act.numel() / Index(n);
        if (act.node()->grad.size() > 0) {
            const ArrayX<float>& g = act.node()->grad;
            for (size_t i = 0; i < n; ++i) {
                scores[i][l] =
                    Eigen::Map<const ArrayX<float>>(g.data() + Index(i) * per, per)
                        .abs()
                        .cast<double>()
                        .mean();
            }
        }
    }
    for (auto& p : model.params()) p.zero_grad();
    return scores;
}

}  // namespace

std::vector<double> sample_saliency(Model& model, const RowMatrixXf& window, int label) {
    return batch_saliency(model, {&window}, {label})[0];
}

std::vector<std::string> saliency_layer_names(Model& model) {
    Tensorf dummy = Tensorf::zeros({1, model.spec().channels, model.spec().samples});
    TapRegistry<float> taps;
    model.forward(dummy, false, &taps);
    std::vector<std::string> names;
    names.reserve(taps.size());
    for (const auto& t : taps.taps()) names.push_back(t.name);
    return names;
}

namespace {

constexpr size_t kSaliencyBatch = 32;

/// Saliency score sequences per (layer, class): seq[c][l][i] over the
/// class's windows in split order, capped at max_per_class.
std::vector<std::vector<std::vector<double>>> split_score_sequences(
    Model& model, const Dataset& ds, Split split, int max_per_class,
    const std::vector<std::string>& layers) {
    int n_classes = ds.inventory.size();
    std::vector<std::vector<size_t>> by_class(static_cast<size_t>(n_classes));
    for (size_t i : ds.split_indices(split)) {
        auto& v = by_class[size_t(ds.windows[i].label)];
        if (max_per_class <= 0 || v.size() < size_t(max_per_class)) v.push_back(i);
    }
    std::vector<std::vector<std::vector<double>>> seq(static_cast<size_t>(n_classes));
    for (int c = 0; c < n_classes; ++c) {
        seq[size_t(c)].assign(layers.size(), {});
    }
    std::vector<size_t> flat;
    for (const auto& v : by_class) flat.insert(flat.end(), v.begin(), v.end());
    for (size_t at = 0; at < flat.size(); at += kSaliencyBatch) {
        size_t end = std::min(flat.size(), at + kSaliencyBatch);
        std::vector<const RowMatrixXf*> ws;
        std::vector<int> labels;
        for (size_t k = at; k < end; ++k) {
            ws.push_back(&ds.windows[flat[k]].data);
            labels.push_back(ds.windows[flat[k]].label);
        }
        auto scores = batch_saliency(model, ws, labels);
        for (size_t k = 0; k < scores.size(); ++k) {
            for (size_t l = 0; l < layers.size(); ++l) {
                seq[size_t(labels[k])][l].push_back(scores[k][l]);
            }
        }
    }
    return seq;
}

}  // namespace

SaliencyMatrix class_saliency(Model& model, const Dataset& ds, Split split, int max_per_class) {
    SaliencyMatrix m;
    m.layer_names = saliency_layer_names(model);
    m.phoneme_symbols = ds.inventory.symbols();
    Index L = Index(m.layer_names.size());
    Index C = Index(m.phoneme_symbols.size());
    m.values = RowMatrix<double>::Constant(L, C, kNan);

    auto seq = split_score_sequences(model, ds, split, max_per_class, m.layer_names);
    for (Index c = 0; c < C; ++c) {
        const auto& per_layer = seq[size_t(c)];
        if (per_layer[0].empty()) continue;  // class absent from split
        for (Index l = 0; l < L; ++l) {
            const auto& s = per_layer[size_t(l)];
            m.values(l, c) = std::accumulate(s.begin(), s.end(), 0.0) / double(s.size());
        }
    }
    return m;
}

SaliencyMatrix row_minmax(const SaliencyMatrix& s) {
    SaliencyMatrix out = s;
    out.normalized = true;
    for (Index l = 0; l < s.values.rows(); ++l) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (Index c = 0; c < s.values.cols(); ++c) {
            double v = s.values(l, c);
            if (std::isnan(v)) continue;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        for (Index c = 0; c < s.values.cols(); ++c) {
            double v = s.values(l, c);
            if (std::isnan(v)) continue;
            out.values(l, c) = hi > lo ? (v - lo) / (hi - lo) : 0.0;
        }
    }
    return out;
}

// ----------------------------- correlations -----------------------------

double pearson_corr(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw DimensionError("pearson: length mismatch");
    size_t n = x.size();
    if (n < 2) return kNan;
    // Shift by the first value before centering. Correlation is shift
    // invariant, and the shifted mean of a constant sequence is exactly
    // zero, so degenerate pairs are detected reliably instead of riding
    // on accumulated rounding.
    double zx = 0, zy = 0;
    for (size_t i = 0; i < n; ++i) {
        zx += x[i] - x[0];
        zy += y[i] - y[0];
    }
    double mx = zx / double(n), my = zy / double(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        double dx = (x[i] - x[0]) - mx, dy = (y[i] - y[0]) - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0 || syy <= 0) return kNan;  // zero variance, degenerate pair
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& x) {
    size_t n = x.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t(0));
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
        double avg = (double(i) + double(j)) / 2.0 + 1.0;  // ties share the mean rank
        for (size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman_corr(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw DimensionError("spearman: length mismatch");
    if (x.size() < 2) return kNan;
    return pearson_corr(average_ranks(x), average_ranks(y));
}

std::string corr_metric_name(CorrMetric m) {
    return m == CorrMetric::pearson ? "pearson" : "spearman";
}

SimilarityMatrix cross_split_similarity(Model& model, const Dataset& ds, Split a, Split b,
                                        CorrMetric metric, int max_per_class) {
    SimilarityMatrix m;
    m.metric = metric;
    m.layer_names = saliency_layer_names(model);
    m.phoneme_symbols = ds.inventory.symbols();
    Index L = Index(m.layer_names.size());
    Index C = Index(m.phoneme_symbols.size());
    m.values = RowMatrix<double>::Constant(L, C, kNan);

    auto seq_a = split_score_sequences(model, ds, a, max_per_class, m.layer_names);
    auto seq_b = split_score_sequences(model, ds, b, max_per_class, m.layer_names);
    for (Index c = 0; c < C; ++c) {
        size_t na = seq_a[size_t(c)][0].size();
        size_t nb = seq_b[size_t(c)][0].size();
        if (na == 0 && nb == 0) continue;
        if (na != nb) {
            throw UsageError("similarity: splits are not paired for class '" +
                             m.phoneme_symbols[size_t(c)] + "' (" + std::to_string(na) + " vs " +
                             std::to_string(nb) + " windows)");
        }
        for (Index l = 0; l < L; ++l) {
            const auto& xs = seq_a[size_t(c)][size_t(l)];
            const auto& ys = seq_b[size_t(c)][size_t(l)];
            m.values(l, c) = metric == CorrMetric::pearson ? pearson_corr(xs, ys)
                                                           : spearman_corr(xs, ys);
        }
    }
    return m;
}

SimilaritySummary summarize_similarity(const SimilarityMatrix& m) {
    SimilaritySummary s;
    double sum = 0;
    std::vector<double> vals;
    for (Index l = 0; l < m.values.rows(); ++l) {
        for (Index c = 0; c < m.values.cols(); ++c) {
            double v = m.values(l, c);
            if (std::isnan(v)) {
                ++s.missing;
            } else {
                vals.push_back(v);
                sum += v;
            }
        }
    }
    s.cells = (long long)(vals.size());
    if (!vals.empty()) {
        s.mean = sum / double(vals.size());
        double sq = 0;
        for (double v : vals) sq += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(sq / double(vals.size()));
    }
    return s;
}

// ----------------------------- serialization -----------------------------

namespace {

std::string grid_csv(const std::vector<std::string>& layers,
                     const std::vector<std::string>& symbols, const RowMatrix<double>& values) {
    std::ostringstream os;
    os << std::setprecision(12);
    os << "layer";
    for (const auto& s : symbols) os << ',' << csv_field(s);
    os << '\n';
    for (Index l = 0; l < values.rows(); ++l) {
        os << csv_field(layers[size_t(l)]);
        for (Index c = 0; c < values.cols(); ++c) {
            os << ',';
            if (std::isnan(values(l, c))) os << "nan";
            else os << values(l, c);
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace

void write_saliency_csv(const SaliencyMatrix& m, const std::string& path) {
    write_text_file(path, grid_csv(m.layer_names, m.phoneme_symbols, m.values));
}

void write_similarity_csv(const SimilarityMatrix& m, const std::string& path) {
    write_text_file(path, grid_csv(m.layer_names, m.phoneme_symbols, m.values));
}

}  // namespace megdec
