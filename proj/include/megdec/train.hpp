#pragma once

#include <string>
#include <vector>

#include "megdec/augment.hpp"
#include "megdec/metrics.hpp"
#include "megdec/model.hpp"
#include "megdec/sampling.hpp"

namespace megdec {

/// Fixed seed for evaluation-time grouping, so grouped scores are
/// reproducible across runs and machines.
inline constexpr std::uint64_t kEvalGroupSeed = 1815;

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 1e-2;
    size_t batch_size = 32;   // paper-scale value is 256
    int epochs = 10;
    SamplingPlan sampling;
    AugmentConfig augment;
    std::uint64_t seed = 0;
    bool eval_grouped = false;
    double clip_norm = 0.0;   // global-norm gradient clip; 0 disables
};

/// Decoupled-weight-decay Adam. step() rejects the update and throws
/// NumericFault before touching any parameter if a gradient is non-finite.
class AdamW {
public:
    AdamW(double lr, double weight_decay, double clip_norm = 0.0, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8);

    void attach(std::vector<Tensorf>& params);
    void step(std::vector<Tensorf>& params);
    long long steps_taken() const { return t_; }

private:
    double lr_, wd_, clip_, beta1_, beta2_, eps_;
    long long t_ = 0;
    std::vector<ArrayX<float>> m_, v_;
};

struct EpochRow {
    int epoch = 0;
    double train_loss = 0.0;
    double train_f1 = 0.0;
    double val_f1 = 0.0;
    bool is_best = false;
};

struct TrainLog {
    std::vector<EpochRow> rows;
    int best_epoch = -1;
    double best_val_f1 = 0.0;
    bool diverged = false;
};

void write_train_log(const TrainLog& log, const std::string& path);

struct EvalResult {
    std::vector<int> truth;
    std::vector<int> predicted;
    F1Report report;
};

/// Scores one split, ungrouped (every window) or grouped with the published
/// evaluation seed. Eval mode only: parameters and running stats untouched.
EvalResult evaluate(Model& model, const Dataset& ds, Split split, bool grouped, Index group_size,
                    size_t batch_size);

/// AdamW training with per-epoch validation and best-F1 checkpoint
/// retention. The model is left holding the best checkpoint. On divergence
/// (non-finite loss or gradients) the log is marked and the best checkpoint
/// so far is kept.
TrainLog train(Model& model, const Dataset& ds, const TrainConfig& cfg);

}  // namespace megdec
