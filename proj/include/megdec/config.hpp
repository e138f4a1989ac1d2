#pragma once

#include <map>
#include <set>
#include <string>

#include "megdec/model.hpp"
#include "megdec/synthetic.hpp"
#include "megdec/train.hpp"

namespace megdec {

/// Flat key=value configuration with dotted keys. Reads track which keys
/// were consumed so a loader can reject unknown ones.
class KvConfig {
public:
    static KvConfig parse_file(const std::string& path);
    static KvConfig parse_text(const std::string& text, const std::string& origin = "<config>");

    bool has(const std::string& key) const;
    void set(const std::string& key, const std::string& value);

    std::string get_string(const std::string& key, const std::string& fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    double get_real(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    std::vector<std::string> unconsumed() const;
    std::string serialize() const;  // sorted key = value lines

private:
    std::map<std::string, std::string> kv_;
    mutable std::set<std::string> used_;
    std::string origin_;
};

/// Everything one experiment needs: data source, model, training recipe,
/// output location. A parsed config rejects unknown keys; the effective
/// config (defaults included) is serialized into every output directory.
struct ExperimentConfig {
    std::string data_source = "synthetic";  // synthetic | native
    std::string data_dir;                   // native: directory with dataset.bin + manifest.csv
    SyntheticSpec synth;
    ModelSpec model;
    TrainConfig train;
    std::string output_dir = "out";

    static ExperimentConfig from_kv(KvConfig& kv);
    static ExperimentConfig from_file(const std::string& path);
    KvConfig to_kv() const;
};

/// Builds the experiment's dataset (generate or ingest) and applies the
/// split-specific standardization policy.
Dataset load_experiment_data(const ExperimentConfig& cfg);

}  // namespace megdec
