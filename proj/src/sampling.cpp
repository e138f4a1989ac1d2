#include "megdec/sampling.hpp"

#include <algorithm>

namespace megdec {

std::vector<size_t> balance_labels(const Dataset& ds, const std::vector<size_t>& pool, Rng& rng) {
    std::vector<std::vector<size_t>> by_class(size_t(ds.inventory.size()));
    for (size_t i : pool) by_class[size_t(ds.windows[i].label)].push_back(i);
    size_t max_count = 0;
    for (const auto& c : by_class) max_count = std::max(max_count, c.size());

    std::vector<size_t> out = pool;
    for (const auto& c : by_class) {
        if (c.empty()) continue;
        for (size_t n = c.size(); n < max_count; ++n) {
            out.push_back(c[rng.uniform_int(0, std::uint64_t(c.size() - 1))]);
        }
    }
    return out;
}

std::vector<GroupPlanEntry> plan_groups(const Dataset& ds, const std::vector<size_t>& pool,
                                        Index group_size, Rng& rng) {
    if (group_size < 1) throw ConfigError("plan_groups: group_size must be >= 1");
    std::vector<std::vector<size_t>> by_class(size_t(ds.inventory.size()));
    for (size_t i : pool) by_class[size_t(ds.windows[i].label)].push_back(i);

    std::vector<GroupPlanEntry> groups;
    for (int label = 0; label < ds.inventory.size(); ++label) {
        auto& members = by_class[size_t(label)];
        if (members.empty()) continue;
        rng.shuffle(members);
        size_t g = size_t(group_size);
        size_t full = members.size() / g;  // leftovers smaller than a group are dropped
        for (size_t k = 0; k < full; ++k) {
            GroupPlanEntry e;
            e.label = label;
            e.members.assign(members.begin() + long(k * g), members.begin() + long((k + 1) * g));
            groups.push_back(std::move(e));
        }
    }
    return groups;
}

RowMatrixXf materialize_group(const Dataset& ds, const GroupPlanEntry& group) {
    if (group.members.empty()) throw UsageError("materialize_group: empty group");
    RowMatrixXf acc = ds.windows[group.members[0]].data;
    for (size_t k = 1; k < group.members.size(); ++k) {
        acc += ds.windows[group.members[k]].data;
    }
    acc /= float(group.members.size());
    return acc;
}

std::vector<GroupedSample> group_average(const Dataset& ds, Split split,
                                         const SamplingPlan& plan) {
    if (plan.repeats < 1) throw ConfigError("group_average: repeats must be >= 1");
    auto pool = ds.split_indices(split);
    Rng rng(substream(plan.seed, 0xA6));
    if (plan.balance) pool = balance_labels(ds, pool, rng);
    std::vector<GroupedSample> out;
    for (int r = 0; r < plan.repeats; ++r) {
        for (const auto& g : plan_groups(ds, pool, plan.group_size, rng)) {
            GroupedSample s;
            s.data = materialize_group(ds, g);
            s.label = g.label;
            s.members = g.members;
            out.push_back(std::move(s));
        }
    }
    return out;
}

std::vector<std::vector<size_t>> make_batches(size_t n, size_t batch_size, Rng& rng) {
    if (batch_size < 1) throw ConfigError("make_batches: batch_size must be >= 1");
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::vector<size_t>> batches;
    for (size_t at = 0; at < n; at += batch_size) {
        size_t end = std::min(n, at + batch_size);
        batches.emplace_back(order.begin() + long(at), order.begin() + long(end));
    }
    return batches;
}

}  // namespace megdec
