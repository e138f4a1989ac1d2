#include "megdec/config.hpp"

#include <cctype>
#include <cmath>
#include <limits>
#include <sstream>

#include "megdec/csv.hpp"
#include "megdec/synthetic.hpp"

namespace megdec {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string fmt_real(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os.precision(std::numeric_limits<double>::max_digits10);
    os << v;
    return os.str();
}

}  // namespace

KvConfig KvConfig::parse_file(const std::string& path) {
    return parse_text(read_text_file(path), path);
}

KvConfig KvConfig::parse_text(const std::string& text, const std::string& origin) {
    KvConfig cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + t + "'");
        }
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        }
        if (cfg.kv_.count(key)) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" +
                              key + "'");
        }
        cfg.kv_[key] = value;
    }
    return cfg;
}

bool KvConfig::has(const std::string& key) const { return kv_.count(key) != 0; }

void KvConfig::set(const std::string& key, const std::string& value) { kv_[key] = value; }

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    used_.insert(key);
    return it->second;
}

long long KvConfig::get_int(const std::string& key, long long fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    used_.insert(key);
    try {
        size_t pos = 0;
        long long v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(origin_ + ": key '" + key + "' wants an integer, got '" + it->second +
                          "'");
    }
}

double KvConfig::get_real(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    used_.insert(key);
    try {
        size_t pos = 0;
        double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(origin_ + ": key '" + key + "' wants a number, got '" + it->second +
                          "'");
    }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    used_.insert(key);
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(origin_ + ": key '" + key + "' wants a boolean, got '" + v + "'");
}

std::vector<std::string> KvConfig::unconsumed() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : kv_) {
        if (!used_.count(k)) out.push_back(k);
    }
    return out;
}

std::string KvConfig::serialize() const {
    std::ostringstream os;
    for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
    return os.str();
}

ExperimentConfig ExperimentConfig::from_kv(KvConfig& kv) {
    ExperimentConfig cfg;

    cfg.data_source = kv.get_string("data.source", cfg.data_source);
    if (cfg.data_source != "synthetic" && cfg.data_source != "native") {
        throw ConfigError("data.source must be 'synthetic' or 'native', got '" +
                          cfg.data_source + "'");
    }
    cfg.data_dir = kv.get_string("data.dir", cfg.data_dir);
    if (cfg.data_source == "native" && cfg.data_dir.empty()) {
        throw ConfigError("data.source = native needs data.dir");
    }

    SyntheticSpec& sy = cfg.synth;
    sy.classes = int(kv.get_int("data.classes", sy.classes));
    sy.per_class = int(kv.get_int("data.per_class", sy.per_class));
    sy.snr = kv.get_real("data.snr", sy.snr);
    sy.seed = std::uint64_t(kv.get_int("data.seed", (long long)sy.seed));
    sy.channels = Index(kv.get_int("data.channels", sy.channels));
    sy.samples = Index(kv.get_int("data.samples", sy.samples));
    sy.sample_rate = kv.get_real("data.sample_rate", sy.sample_rate);
    sy.session_drift = kv.get_real("data.session_drift", sy.session_drift);

    ModelSpec& m = cfg.model;
    m.arch = arch_from_name(kv.get_string("model.arch", arch_name(m.arch)));
    m.hidden_dim = Index(kv.get_int("model.hidden_dim", m.hidden_dim));
    m.cnn_blocks = int(kv.get_int("model.cnn_blocks", m.cnn_blocks));
    m.kernel = Index(kv.get_int("model.kernel", m.kernel));
    m.input_instance_norm = kv.get_bool("model.input_norm", m.input_instance_norm);
    m.block_norm = norm_kind_from_name(kv.get_string("model.block_norm",
                                                     norm_kind_name(m.block_norm)));
    m.group_norm_groups = Index(kv.get_int("model.groups", m.group_norm_groups));
    m.transformer_layers = int(kv.get_int("model.transformer_layers", m.transformer_layers));
    m.transformer_heads = int(kv.get_int("model.transformer_heads", m.transformer_heads));
    m.stft_n_fft = Index(kv.get_int("model.stft_n_fft", m.stft_n_fft));
    m.stft_hop = Index(kv.get_int("model.stft_hop", m.stft_hop));
    m.nonlinearity = kv.get_string("model.nonlinearity", m.nonlinearity);
    // synthetic data fixes the model's input geometry; native data overrides
    // it again after ingest
    m.channels = sy.channels;
    m.samples = sy.samples;
    m.n_classes = sy.classes;

    TrainConfig& t = cfg.train;
    t.lr = kv.get_real("train.lr", t.lr);
    t.weight_decay = kv.get_real("train.weight_decay", t.weight_decay);
    t.batch_size = size_t(kv.get_int("train.batch_size", (long long)t.batch_size));
    t.epochs = int(kv.get_int("train.epochs", t.epochs));
    t.seed = std::uint64_t(kv.get_int("train.seed", (long long)t.seed));
    t.eval_grouped = kv.get_bool("train.eval_grouped", t.eval_grouped);
    t.clip_norm = kv.get_real("train.clip_norm", t.clip_norm);

    SamplingPlan& sp = t.sampling;
    sp.group_size = Index(kv.get_int("sampling.group_size", sp.group_size));
    sp.repeats = int(kv.get_int("sampling.repeats", sp.repeats));
    sp.balance = kv.get_bool("sampling.balance", sp.balance);
    sp.seed = std::uint64_t(kv.get_int("sampling.seed", (long long)sp.seed));

    AugmentConfig& a = t.augment;
    a.enabled = kv.get_bool("augment.enabled", a.enabled);
    a.p_apply = float(kv.get_real("augment.p_apply", a.p_apply));
    a.noise_rel_std = float(kv.get_real("augment.noise_rel_std", a.noise_rel_std));
    a.max_shift = Index(kv.get_int("augment.max_shift", a.max_shift));
    a.max_mask = Index(kv.get_int("augment.max_mask", a.max_mask));
    a.channel_drop_frac = float(kv.get_real("augment.channel_drop_frac", a.channel_drop_frac));
    a.amp_lo = float(kv.get_real("augment.amp_lo", a.amp_lo));
    a.amp_hi = float(kv.get_real("augment.amp_hi", a.amp_hi));
    a.band_lo = float(kv.get_real("augment.band_lo", a.band_lo));
    a.band_hi = float(kv.get_real("augment.band_hi", a.band_hi));
    a.band_max_hz = float(kv.get_real("augment.band_max_hz", a.band_max_hz));
    a.band_count = int(kv.get_int("augment.band_count", a.band_count));
    a.band_pick_min = int(kv.get_int("augment.band_pick_min", a.band_pick_min));
    a.band_pick_max = int(kv.get_int("augment.band_pick_max", a.band_pick_max));
    a.sample_rate = float(sy.sample_rate);

    cfg.output_dir = kv.get_string("output.dir", cfg.output_dir);

    auto leftovers = kv.unconsumed();
    if (!leftovers.empty()) {
        std::string msg = "unknown config key(s):";
        for (const auto& k : leftovers) msg += " '" + k + "'";
        throw ConfigError(msg);
    }

    if (!(a.p_apply >= 0.0f && a.p_apply <= 1.0f)) {
        throw ConfigError("augment.p_apply must lie in [0, 1]");
    }
    if (sy.classes < 1 || sy.per_class < 1 || sy.channels < 1 || sy.samples < 1) {
        throw ConfigError("data.classes, data.per_class, data.channels and data.samples "
                          "must be positive");
    }
    cfg.model.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    KvConfig kv = KvConfig::parse_file(path);
    return from_kv(kv);
}

KvConfig ExperimentConfig::to_kv() const {
    KvConfig kv;
    kv.set("data.source", data_source);
    if (!data_dir.empty()) kv.set("data.dir", data_dir);
    kv.set("data.classes", std::to_string(synth.classes));
    kv.set("data.per_class", std::to_string(synth.per_class));
    kv.set("data.snr", fmt_real(synth.snr));
    kv.set("data.seed", std::to_string(synth.seed));
    kv.set("data.channels", std::to_string(synth.channels));
    kv.set("data.samples", std::to_string(synth.samples));
    kv.set("data.sample_rate", fmt_real(synth.sample_rate));
    kv.set("data.session_drift", fmt_real(synth.session_drift));

    kv.set("model.arch", arch_name(model.arch));
    kv.set("model.hidden_dim", std::to_string(model.hidden_dim));
    kv.set("model.cnn_blocks", std::to_string(model.cnn_blocks));
    kv.set("model.kernel", std::to_string(model.kernel));
    kv.set("model.input_norm", model.input_instance_norm ? "true" : "false");
    kv.set("model.block_norm", norm_kind_name(model.block_norm));
    kv.set("model.groups", std::to_string(model.group_norm_groups));
    kv.set("model.transformer_layers", std::to_string(model.transformer_layers));
    kv.set("model.transformer_heads", std::to_string(model.transformer_heads));
    kv.set("model.stft_n_fft", std::to_string(model.stft_n_fft));
    kv.set("model.stft_hop", std::to_string(model.stft_hop));
    kv.set("model.nonlinearity", model.nonlinearity);

    kv.set("train.lr", fmt_real(train.lr));
    kv.set("train.weight_decay", fmt_real(train.weight_decay));
    kv.set("train.batch_size", std::to_string(train.batch_size));
    kv.set("train.epochs", std::to_string(train.epochs));
    kv.set("train.seed", std::to_string(train.seed));
    kv.set("train.eval_grouped", train.eval_grouped ? "true" : "false");
    kv.set("train.clip_norm", fmt_real(train.clip_norm));

    kv.set("sampling.group_size", std::to_string(train.sampling.group_size));
    kv.set("sampling.repeats", std::to_string(train.sampling.repeats));
    kv.set("sampling.balance", train.sampling.balance ? "true" : "false");
    kv.set("sampling.seed", std::to_string(train.sampling.seed));

    const AugmentConfig& a = train.augment;
    kv.set("augment.enabled", a.enabled ? "true" : "false");
    kv.set("augment.p_apply", fmt_real(a.p_apply));
    kv.set("augment.noise_rel_std", fmt_real(a.noise_rel_std));
    kv.set("augment.max_shift", std::to_string(a.max_shift));
    kv.set("augment.max_mask", std::to_string(a.max_mask));
    kv.set("augment.channel_drop_frac", fmt_real(a.channel_drop_frac));
    kv.set("augment.amp_lo", fmt_real(a.amp_lo));
    kv.set("augment.amp_hi", fmt_real(a.amp_hi));
    kv.set("augment.band_lo", fmt_real(a.band_lo));
    kv.set("augment.band_hi", fmt_real(a.band_hi));
    kv.set("augment.band_max_hz", fmt_real(a.band_max_hz));
    kv.set("augment.band_count", std::to_string(a.band_count));
    kv.set("augment.band_pick_min", std::to_string(a.band_pick_min));
    kv.set("augment.band_pick_max", std::to_string(a.band_pick_max));

    kv.set("output.dir", output_dir);
    return kv;
}

Dataset load_experiment_data(const ExperimentConfig& cfg) {
    Dataset ds;
    if (cfg.data_source == "synthetic") {
        ds = generate_synthetic(cfg.synth);
    } else {
        ds = read_dataset(cfg.data_dir + "/dataset.bin", cfg.data_dir + "/manifest.csv",
                          PhonemeInventory::arpabet39());
    }
    standardize_policy(ds);
    return ds;
}

}  // namespace megdec
