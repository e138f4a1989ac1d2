#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "megdec/tensor.hpp"

namespace megdec {

enum class Split { train, validation, test, holdout };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

/// Ordered phoneme symbol inventory with a bijective symbol <-> id map.
/// The default is the 39-symbol ARPAbet-style set; smaller inventories are
/// allowed for fixtures.
class PhonemeInventory {
public:
    static PhonemeInventory arpabet39();
    static PhonemeInventory from_symbols(std::vector<std::string> symbols);

    int size() const { return int(symbols_.size()); }
    const std::string& symbol(int id) const;
    int id(const std::string& symbol) const;  // throws ParseError on unknown symbol
    const std::vector<std::string>& symbols() const { return symbols_; }

private:
    std::vector<std::string> symbols_;
    std::unordered_map<std::string, int> ids_;
};

/// One classification example: channels x time samples of MEG signal.
struct PhonemeWindow {
    RowMatrixXf data;  // [channels x samples]
    int label = 0;
    Split split = Split::train;
    std::string session;
};

struct Dataset {
    PhonemeInventory inventory;
    Index channels = 0;
    Index samples = 0;
    std::vector<PhonemeWindow> windows;

    std::vector<size_t> split_indices(Split s) const;
    std::vector<long long> class_histogram(Split s) const;
    size_t split_count(Split s) const { return split_indices(s).size(); }
};

/// Per-channel mean/std plus where they came from.
struct ChannelStats {
    Eigen::ArrayXf mean;
    Eigen::ArrayXf std;
    Split source_split = Split::train;
    size_t n_windows = 0;
};

/// Per-channel moments over all windows and time points of one split,
/// accumulated in double; std is floored so dead channels stay usable.
ChannelStats compute_stats(const Dataset& ds, Split s, float std_floor = 1e-8f);

RowMatrixXf standardize_window(const RowMatrixXf& data, const ChannelStats& stats);
void standardize_split(Dataset& ds, Split s, const ChannelStats& stats);

/// The split-specific policy: train and validation are standardized with
/// train statistics; test and holdout each with their own.
void standardize_policy(Dataset& ds);

// ----------------------------- native format -----------------------------
//
// Window file: magic "MEGPH1\0", u32 channel count, u32 time samples,
// u64 window count, then count windows of channels*samples little-endian
// fp32 values, row-major. Labels live in the manifest CSV with columns
// (index, phoneme, split, session).

void write_dataset(const Dataset& ds, const std::string& data_path,
                   const std::string& manifest_path);

Dataset read_dataset(const std::string& data_path, const std::string& manifest_path,
                     const PhonemeInventory& inventory);

}  // namespace megdec
