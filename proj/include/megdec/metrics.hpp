#pragma once

#include <string>
#include <vector>

#include "megdec/common.hpp"

namespace megdec {

struct ClassScore {
    long long tp = 0;
    long long fp = 0;
    long long fn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct F1Report {
    std::vector<ClassScore> per_class;
    std::vector<long long> confusion;  // row-major [truth * num_classes + predicted]
    double macro_f1 = 0.0;
};

/// Macro-averaged F1 over a fixed inventory of num_classes classes.
/// A class with no predictions and no occurrences scores 0 and still
/// counts in the denominator, so the macro mean never shrinks its base.
inline F1Report f1_report(const std::vector<int>& predicted, const std::vector<int>& truth,
                          int num_classes) {
    if (predicted.size() != truth.size()) {
        throw DimensionError("f1_report: " + std::to_string(predicted.size()) +
                             " predictions vs " + std::to_string(truth.size()) + " labels");
    }
    if (num_classes < 1) throw ConfigError("f1_report: num_classes must be >= 1");
    F1Report rep;
    rep.per_class.resize(size_t(num_classes));
    rep.confusion.assign(size_t(num_classes) * size_t(num_classes), 0);
    for (size_t i = 0; i < truth.size(); ++i) {
        int t = truth[i];
        int p = predicted[i];
        if (t < 0 || t >= num_classes || p < 0 || p >= num_classes) {
            throw UsageError("f1_report: label pair (" + std::to_string(t) + "," +
                             std::to_string(p) + ") out of range for " +
                             std::to_string(num_classes) + " classes");
        }
        ++rep.confusion[size_t(t) * size_t(num_classes) + size_t(p)];
        if (t == p) {
            ++rep.per_class[size_t(t)].tp;
        } else {
            ++rep.per_class[size_t(t)].fn;
            ++rep.per_class[size_t(p)].fp;
        }
    }
    double sum = 0.0;
    for (auto& cs : rep.per_class) {
        cs.precision = cs.tp + cs.fp > 0 ? double(cs.tp) / double(cs.tp + cs.fp) : 0.0;
        cs.recall = cs.tp + cs.fn > 0 ? double(cs.tp) / double(cs.tp + cs.fn) : 0.0;
        cs.f1 = cs.precision + cs.recall > 0.0
                    ? 2.0 * cs.precision * cs.recall / (cs.precision + cs.recall)
                    : 0.0;
        sum += cs.f1;
    }
    rep.macro_f1 = sum / double(num_classes);
    return rep;
}

inline double f1_macro(const std::vector<int>& predicted, const std::vector<int>& truth,
                       int num_classes) {
    return f1_report(predicted, truth, num_classes).macro_f1;
}

}  // namespace megdec
