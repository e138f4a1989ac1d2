#pragma once

#include <string>
#include <unordered_set>
#include <vector>

#include "megdec/tensor.hpp"

namespace megdec {

/// One recorded activation: the output of a named trainable sublayer,
/// still attached to the tape so its gradient survives backward().
template <typename S>
struct Tap {
    std::string name;
    Tensor<S> value;
};

/// Collects sublayer outputs during a forward pass, in execution order.
/// Passed into Model::forward by callers that need activation gradients;
/// names must be unique within one pass.
template <typename S>
class TapRegistry {
public:
    void clear() {
        taps_.clear();
        names_.clear();
    }

    void record(std::string name, const Tensor<S>& value) {
        if (!names_.insert(name).second) {
            throw UsageError("TapRegistry: duplicate tap name '" + name + "'");
        }
        taps_.push_back({std::move(name), value});
    }

    const std::vector<Tap<S>>& taps() const { return taps_; }
    size_t size() const { return taps_.size(); }

private:
    std::vector<Tap<S>> taps_;
    std::unordered_set<std::string> names_;
};

template <typename S>
void tap_record(TapRegistry<S>* reg, const std::string& name, const Tensor<S>& value) {
    if (reg) reg->record(name, value);
}

}  // namespace megdec
