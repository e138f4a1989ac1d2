#include "megdec/train.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "megdec/csv.hpp"

namespace megdec {

AdamW::AdamW(double lr, double weight_decay, double clip_norm, double beta1, double beta2,
             double eps)
    : lr_(lr), wd_(weight_decay), clip_(clip_norm), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > 0)) throw ConfigError("AdamW: lr must be > 0");
    if (wd_ < 0) throw ConfigError("AdamW: weight_decay must be >= 0");
}

void AdamW::attach(std::vector<Tensorf>& params) {
    m_.clear();
    v_.clear();
    t_ = 0;
    for (auto& p : params) {
        m_.push_back(ArrayX<float>::Zero(p.numel()));
        v_.push_back(ArrayX<float>::Zero(p.numel()));
    }
}

void AdamW::step(std::vector<Tensorf>& params) {
    if (params.size() != m_.size()) throw UsageError("AdamW: step before attach");
    // validate every gradient before mutating anything
    for (auto& p : params) {
        if (p.has_grad() && !p.grad().isFinite().all()) {
            throw NumericFault("AdamW: non-finite gradient, step rejected");
        }
    }
    double scale = 1.0;
    if (clip_ > 0) {
        double sq = 0;
        for (auto& p : params) {
            if (p.has_grad()) sq += double(p.grad().square().sum());
        }
        double norm = std::sqrt(sq);
        if (norm > clip_) scale = clip_ / norm;
    }
    ++t_;
    float bc1 = float(1.0 - std::pow(beta1_, double(t_)));
    float bc2 = float(1.0 - std::pow(beta2_, double(t_)));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensorf& p = params[i];
        ArrayX<float> g = p.has_grad() ? ArrayX<float>(p.grad() * float(scale))
                                       : ArrayX<float>(ArrayX<float>::Zero(p.numel()));
        m_[i] = float(beta1_) * m_[i] + float(1.0 - beta1_) * g;
        v_[i] = float(beta2_) * v_[i] + float(1.0 - beta2_) * g.square();
        ArrayX<float> mhat = m_[i] / bc1;
        ArrayX<float> vhat = v_[i] / bc2;
        p.array() -= float(lr_) * (mhat / (vhat.sqrt() + float(eps_)) + float(wd_) * p.array());
    }
}

// ----------------------------- evaluation -----------------------------

namespace {

Tensorf stack_windows(const std::vector<RowMatrixXf>& ws) {
    Index C = ws[0].rows(), T = ws[0].cols();
    Tensorf batch = Tensorf::zeros({Index(ws.size()), C, T});
    for (size_t i = 0; i < ws.size(); ++i) {
        Eigen::Map<RowMatrix<float>>(batch.array().data() + Index(i) * C * T, C, T) = ws[i];
    }
    return batch;
}

}  // namespace

EvalResult evaluate(Model& model, const Dataset& ds, Split split, bool grouped, Index group_size,
                    size_t batch_size) {
    auto indices = ds.split_indices(split);
    if (indices.empty()) throw UsageError("evaluate: split '" + split_name(split) + "' is empty");
    if (batch_size < 1) throw ConfigError("evaluate: batch_size must be >= 1");

    std::vector<GroupPlanEntry> units;
    if (grouped) {
        Rng rng(substream(kEvalGroupSeed, std::uint64_t(split)));
        units = plan_groups(ds, indices, group_size, rng);
        if (units.empty()) {
            throw UsageError("evaluate: grouped scoring left no units (group_size " +
                             std::to_string(group_size) + " exceeds every class count)");
        }
    } else {
        units.reserve(indices.size());
        for (size_t i : indices) {
            units.push_back({ds.windows[i].label, {i}});
        }
    }

    EvalResult res;
    for (size_t at = 0; at < units.size(); at += batch_size) {
        size_t end = std::min(units.size(), at + batch_size);
        std::vector<RowMatrixXf> ws;
        ws.reserve(end - at);
        for (size_t u = at; u < end; ++u) {
            ws.push_back(materialize_group(ds, units[u]));
            res.truth.push_back(units[u].label);
        }
        Tensorf logits = model.forward(stack_windows(ws), false);
        for (int p : predict(logits)) res.predicted.push_back(p);
    }
    res.report = f1_report(res.predicted, res.truth, model.spec().n_classes);
    return res;
}

// ----------------------------- training loop -----------------------------

namespace {

// rng substream tags for the training loop
constexpr std::uint64_t kTagBalance = 0xBA1A;
constexpr std::uint64_t kTagGroups = 0x6E0F;
constexpr std::uint64_t kTagBatches = 0xBA7C;
constexpr std::uint64_t kTagAugment = 0xA1160;

}  // namespace

TrainLog train(Model& model, const Dataset& ds, const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");
    auto base_pool = ds.split_indices(Split::train);
    if (base_pool.empty()) throw UsageError("train: train split is empty");
    if (ds.split_indices(Split::validation).empty()) {
        throw UsageError("train: validation split is empty");
    }

    std::vector<size_t> pool = base_pool;
    if (cfg.sampling.balance) {
        Rng rng(substream(cfg.seed, kTagBalance));
        pool = balance_labels(ds, base_pool, rng);
    }

    AdamW opt(cfg.lr, cfg.weight_decay, cfg.clip_norm);
    opt.attach(model.params());

    TrainLog log;
    auto best_state = model.snapshot_state();
    double best_f1 = -1.0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        size_t unit_count = 0;
        std::vector<int> train_truth, train_pred;
        try {
            for (int rep = 0; rep < cfg.sampling.repeats; ++rep) {
                Rng group_rng(substream(cfg.seed, kTagGroups, std::uint64_t(epoch),
                                        std::uint64_t(rep)));
                auto groups = plan_groups(ds, pool, cfg.sampling.group_size, group_rng);
                if (groups.empty()) {
                    throw UsageError("train: grouping left no units (group_size " +
                                     std::to_string(cfg.sampling.group_size) +
                                     " exceeds every class count)");
                }
                Rng batch_rng(substream(cfg.seed, kTagBatches, std::uint64_t(epoch),
                                        std::uint64_t(rep)));
                auto batches = make_batches(groups.size(), cfg.batch_size, batch_rng);
                std::uint64_t aug_base =
                    substream(cfg.seed, kTagAugment, std::uint64_t(epoch), std::uint64_t(rep));
                for (const auto& batch : batches) {
                    std::vector<RowMatrixXf> ws;
                    std::vector<int> labels;
                    ws.reserve(batch.size());
                    for (size_t u : batch) {
                        RowMatrixXf w = materialize_group(ds, groups[u]);
                        if (cfg.augment.enabled) {
                            Rng aug_rng(substream(aug_base, std::uint64_t(u)));
                            apply_augmentations(w, cfg.augment, aug_rng);
                        }
                        ws.push_back(std::move(w));
                        labels.push_back(groups[u].label);
                    }
                    Tensorf logits = model.forward(stack_windows(ws), true);
                    Tensorf loss = softmax_cross_entropy(logits, labels);
                    if (!std::isfinite(loss.item())) {
                        throw NumericFault("train: non-finite loss");
                    }
                    for (auto& p : model.params()) p.zero_grad();
                    backward(loss);
                    opt.step(model.params());

                    loss_sum += double(loss.item()) * double(batch.size());
                    unit_count += batch.size();
                    auto preds = predict(logits);
                    train_pred.insert(train_pred.end(), preds.begin(), preds.end());
                    train_truth.insert(train_truth.end(), labels.begin(), labels.end());
                }
            }
        } catch (const NumericFault&) {
            log.diverged = true;
            model.restore_state(best_state);
            break;
        }

        EpochRow row;
        row.epoch = epoch;
        row.train_loss = loss_sum / double(unit_count);
        row.train_f1 = f1_macro(train_pred, train_truth, model.spec().n_classes);
        // validate on a read-only snapshot of this epoch's parameters
        row.val_f1 = evaluate(model, ds, Split::validation, cfg.eval_grouped,
                              cfg.sampling.group_size, cfg.batch_size)
                         .report.macro_f1;
        if (row.val_f1 > best_f1) {
            best_f1 = row.val_f1;
            log.best_epoch = epoch;
            best_state = model.snapshot_state();
        }
        log.rows.push_back(row);
    }

    for (auto& row : log.rows) row.is_best = row.epoch == log.best_epoch;
    log.best_val_f1 = best_f1 < 0 ? 0.0 : best_f1;
    model.restore_state(best_state);
    return log;
}

void write_train_log(const TrainLog& log, const std::string& path) {
    std::ostringstream os;
    os << "epoch,train_loss,train_f1,val_f1,is_best\n";
    os << std::setprecision(10);
    for (const auto& r : log.rows) {
        os << r.epoch << ',' << r.train_loss << ',' << r.train_f1 << ',' << r.val_f1 << ','
           << (r.is_best ? 1 : 0) << '\n';
    }
    if (log.diverged) os << "# diverged: training aborted, best checkpoint retained\n";
    write_text_file(path, os.str());
}

}  // namespace megdec
