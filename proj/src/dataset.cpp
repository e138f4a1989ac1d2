#include "megdec/dataset.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "megdec/csv.hpp"

namespace megdec {

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test: return "test";
        case Split::holdout: return "holdout";
    }
    throw UsageError("split_name: bad split value");
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "validation" || name == "val") return Split::validation;
    if (name == "test") return Split::test;
    if (name == "holdout") return Split::holdout;
    throw ParseError("unknown split '" + name + "'");
}

PhonemeInventory PhonemeInventory::arpabet39() {
    return from_symbols({"aa", "ae", "ah", "ao", "aw", "ay", "b",  "ch", "d",  "dh",
                         "eh", "er", "ey", "f",  "g",  "hh", "ih", "iy", "jh", "k",
                         "l",  "m",  "n",  "ng", "ow", "oy", "p",  "r",  "s",  "sh",
                         "t",  "th", "uh", "uw", "v",  "w",  "y",  "z",  "zh"});
}

PhonemeInventory PhonemeInventory::from_symbols(std::vector<std::string> symbols) {
    if (symbols.empty()) throw ConfigError("phoneme inventory is empty");
    PhonemeInventory inv;
    inv.symbols_ = std::move(symbols);
    for (size_t i = 0; i < inv.symbols_.size(); ++i) {
        if (!inv.ids_.emplace(inv.symbols_[i], int(i)).second) {
            throw ConfigError("duplicate phoneme symbol '" + inv.symbols_[i] + "'");
        }
    }
    return inv;
}

const std::string& PhonemeInventory::symbol(int id) const {
    if (id < 0 || id >= size()) {
        throw UsageError("phoneme id " + std::to_string(id) + " out of range");
    }
    return symbols_[size_t(id)];
}

int PhonemeInventory::id(const std::string& symbol) const {
    auto it = ids_.find(symbol);
    if (it == ids_.end()) throw ParseError("unknown phoneme symbol '" + symbol + "'");
    return it->second;
}

std::vector<size_t> Dataset::split_indices(Split s) const {
    std::vector<size_t> idx;
    for (size_t i = 0; i < windows.size(); ++i) {
        if (windows[i].split == s) idx.push_back(i);
    }
    return idx;
}

std::vector<long long> Dataset::class_histogram(Split s) const {
    std::vector<long long> h(size_t(inventory.size()), 0);
    for (const auto& w : windows) {
        if (w.split == s) ++h[size_t(w.label)];
    }
    return h;
}

ChannelStats compute_stats(const Dataset& ds, Split s, float std_floor) {
    auto idx = ds.split_indices(s);
    if (idx.empty()) {
        throw UsageError("compute_stats: split '" + split_name(s) + "' is empty");
    }
    Index C = ds.channels, T = ds.samples;
    Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(C);
    Eigen::ArrayXd sumsq = Eigen::ArrayXd::Zero(C);
    for (size_t i : idx) {
        const RowMatrixXf& d = ds.windows[i].data;
        sum += d.rowwise().sum().cast<double>().array();
        sumsq += d.array().square().rowwise().sum().cast<double>();
    }
    double n = double(idx.size()) * double(T);
    Eigen::ArrayXd mean = sum / n;
    Eigen::ArrayXd var = (sumsq / n - mean.square()).max(0.0);
    ChannelStats st;
    st.mean = mean.cast<float>();
    st.std = var.sqrt().cast<float>().max(std_floor);
    st.source_split = s;
    st.n_windows = idx.size();
    return st;
}

RowMatrixXf standardize_window(const RowMatrixXf& data, const ChannelStats& stats) {
    if (data.rows() != stats.mean.size()) {
        throw DimensionError("standardize: " + std::to_string(data.rows()) +
                             " channels vs stats for " + std::to_string(stats.mean.size()));
    }
    return ((data.array().colwise() - stats.mean).colwise() / stats.std).matrix();
}

void standardize_split(Dataset& ds, Split s, const ChannelStats& stats) {
    for (auto& w : ds.windows) {
        if (w.split == s) {
            w.data = standardize_window(w.data, stats);
        }
    }
}

void standardize_policy(Dataset& ds) {
    ChannelStats train_stats = compute_stats(ds, Split::train);
    standardize_split(ds, Split::train, train_stats);
    if (!ds.split_indices(Split::validation).empty()) {
        standardize_split(ds, Split::validation, train_stats);
    }
    for (Split s : {Split::test, Split::holdout}) {
        if (!ds.split_indices(s).empty()) {
            standardize_split(ds, s, compute_stats(ds, s));
        }
    }
}

// ----------------------------- native format -----------------------------

namespace {

constexpr char kMagic[7] = {'M', 'E', 'G', 'P', 'H', '1', '\0'};

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    put_u32(out, std::uint32_t(v));
    put_u32(out, std::uint32_t(v >> 32));
}

std::uint32_t get_u32(std::istream& in, const std::string& path, std::streampos& off) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw ParseError(path + ": truncated at byte " + std::to_string(off));
    off += 4;
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
}

std::uint64_t get_u64(std::istream& in, const std::string& path, std::streampos& off) {
    std::uint64_t lo = get_u32(in, path, off);
    std::uint64_t hi = get_u32(in, path, off);
    return lo | hi << 32;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& data_path,
                   const std::string& manifest_path) {
    std::ofstream out(data_path, std::ios::binary);
    if (!out) throw IoError("cannot write " + data_path);
    out.write(kMagic, sizeof(kMagic));
    put_u32(out, std::uint32_t(ds.channels));
    put_u32(out, std::uint32_t(ds.samples));
    put_u64(out, std::uint64_t(ds.windows.size()));
    for (const auto& w : ds.windows) {
        out.write(reinterpret_cast<const char*>(w.data.data()),
                  std::streamsize(sizeof(float)) * w.data.size());
    }
    if (!out) throw IoError("short write to " + data_path);

    std::string manifest = "index,phoneme,split,session\n";
    for (size_t i = 0; i < ds.windows.size(); ++i) {
        const auto& w = ds.windows[i];
        manifest += csv_join({std::to_string(i), ds.inventory.symbol(w.label),
                              split_name(w.split), w.session});
        manifest += '\n';
    }
    write_text_file(manifest_path, manifest);
}

Dataset read_dataset(const std::string& data_path, const std::string& manifest_path,
                     const PhonemeInventory& inventory) {
    std::ifstream in(data_path, std::ios::binary);
    if (!in) throw IoError("cannot open " + data_path);
    std::streampos off = 0;
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(kMagic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw ParseError(data_path + ": bad magic at byte 0");
    }
    off += sizeof(kMagic);
    std::uint32_t channels = get_u32(in, data_path, off);
    std::uint32_t samples = get_u32(in, data_path, off);
    std::uint64_t count = get_u64(in, data_path, off);
    if (channels == 0 || samples == 0) {
        throw ParseError(data_path + ": zero geometry in header");
    }

    auto rows = read_csv(manifest_path);
    if (rows.empty() || rows[0] != std::vector<std::string>{"index", "phoneme", "split", "session"}) {
        throw ParseError(manifest_path + ": missing manifest header row");
    }
    if (rows.size() - 1 != count) {
        throw ParseError(manifest_path + ": " + std::to_string(rows.size() - 1) +
                         " manifest rows for " + std::to_string(count) + " windows");
    }

    Dataset ds;
    ds.inventory = inventory;
    ds.channels = Index(channels);
    ds.samples = Index(samples);
    ds.windows.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        auto& row = rows[size_t(i) + 1];
        if (row.size() != 4) {
            throw ParseError(manifest_path + ": row " + std::to_string(i + 1) +
                             " has " + std::to_string(row.size()) + " fields");
        }
        if (std::stoull(row[0]) != i) {
            throw ParseError(manifest_path + ": row " + std::to_string(i + 1) +
                             " index mismatch (got " + row[0] + ")");
        }
        PhonemeWindow& w = ds.windows[size_t(i)];
        w.label = inventory.id(row[1]);
        w.split = split_from_name(row[2]);
        w.session = row[3];
        w.data.resize(Index(channels), Index(samples));
        in.read(reinterpret_cast<char*>(w.data.data()),
                std::streamsize(sizeof(float)) * w.data.size());
        if (!in) throw ParseError(data_path + ": truncated window at byte " + std::to_string(off));
        off += std::streamsize(sizeof(float)) * w.data.size();
        if (!w.data.allFinite()) {
            throw ParseError(data_path + ": non-finite values in window " + std::to_string(i));
        }
    }

    // Files written from a reduced inventory come back as the same k-class
    // problem: keep only the candidate symbols the manifest actually uses,
    // in candidate order, and remap labels.
    std::vector<bool> seen(size_t(inventory.size()), false);
    for (const auto& w : ds.windows) seen[size_t(w.label)] = true;
    if (size_t(std::count(seen.begin(), seen.end(), true)) < seen.size()) {
        std::vector<std::string> used;
        std::vector<int> remap(seen.size(), -1);
        for (int c = 0; c < inventory.size(); ++c) {
            if (seen[size_t(c)]) {
                remap[size_t(c)] = int(used.size());
                used.push_back(inventory.symbol(c));
            }
        }
        ds.inventory = PhonemeInventory::from_symbols(std::move(used));
        for (auto& w : ds.windows) w.label = remap[size_t(w.label)];
    }
    return ds;
}

}  // namespace megdec
