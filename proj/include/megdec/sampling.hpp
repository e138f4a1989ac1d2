#pragma once

#include <vector>

#include "megdec/dataset.hpp"

namespace megdec {

struct SamplingPlan {
    Index group_size = 100;
    int repeats = 1;
    bool balance = true;
    std::uint64_t seed = 0;
};

/// One training/evaluation unit: the mean of group_size same-class windows.
struct GroupedSample {
    RowMatrixXf data;
    int label = 0;
    std::vector<size_t> members;
};

/// A group before materialization: member indices only, no pixel data.
struct GroupPlanEntry {
    int label = 0;
    std::vector<size_t> members;
};

/// Oversamples minority classes in `pool` (indices into ds.windows) until
/// every present class count equals the pre-balancing maximum; duplicates
/// are drawn uniformly from the duplicated class.
std::vector<size_t> balance_labels(const Dataset& ds, const std::vector<size_t>& pool, Rng& rng);

/// Seeded shuffle within each class, then consecutive groups of group_size;
/// leftovers smaller than group_size are dropped. group_size 1 passes every
/// sample through as its own group.
std::vector<GroupPlanEntry> plan_groups(const Dataset& ds, const std::vector<size_t>& pool,
                                        Index group_size, Rng& rng);

RowMatrixXf materialize_group(const Dataset& ds, const GroupPlanEntry& group);

/// Spec-level convenience: balanced (optional) + grouped + materialized,
/// re-drawn plan.repeats times. Heavier than planning; tests and evaluation
/// paths use it, the training loop materializes per batch instead.
std::vector<GroupedSample> group_average(const Dataset& ds, Split split, const SamplingPlan& plan);

/// Shuffled index batches over n items; the final short batch is kept.
std::vector<std::vector<size_t>> make_batches(size_t n, size_t batch_size, Rng& rng);

}  // namespace megdec
