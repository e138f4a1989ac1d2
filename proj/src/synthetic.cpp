#include "megdec/synthetic.hpp"

#include <cmath>
#include <limits>

namespace megdec {

namespace {

// rng substream tags
constexpr std::uint64_t kTagTemplate = 1;
constexpr std::uint64_t kTagTrainNoise = 2;
constexpr std::uint64_t kTagEvalNoise = 3;
constexpr std::uint64_t kTagDrift = 4;

constexpr double kPi = 3.14159265358979323846;

void validate(const SyntheticSpec& spec) {
    if (spec.classes < 1) throw ConfigError("synthetic: classes must be >= 1");
    if (spec.per_class < 1) throw ConfigError("synthetic: per_class must be >= 1");
    if (!(spec.snr > 0)) throw ConfigError("synthetic: snr must be > 0");
    if (spec.channels < 1 || spec.samples < 1) throw ConfigError("synthetic: bad geometry");
    if (spec.session_drift < 0 || spec.session_drift >= 1) {
        throw ConfigError("synthetic: session_drift must be in [0, 1)");
    }
}

RowMatrixXf make_template(const SyntheticSpec& spec, int cls) {
    Rng rng(substream(spec.seed, kTagTemplate, std::uint64_t(cls)));
    Index C = spec.channels, T = spec.samples;
    int n_sin = int(rng.uniform_int(2, 4));
    RowMatrixXf t = RowMatrixXf::Zero(C, T);
    for (int s = 0; s < n_sin; ++s) {
        double freq = rng.uniform(1.0, 20.0);
        double phase = rng.uniform(0.0, 2.0 * kPi);
        double amp = rng.uniform(0.5, 1.0);
        double center = rng.uniform(0.0, double(C - 1));
        double width = rng.uniform(std::max(2.0, double(C) / 20.0), std::max(4.0, double(C) / 5.0));
        Eigen::ArrayXf spatial(C);
        for (Index c = 0; c < C; ++c) {
            double z = (double(c) - center) / width;
            spatial[c] = float(std::exp(-0.5 * z * z));
        }
        Eigen::ArrayXf wave(T);
        for (Index i = 0; i < T; ++i) {
            wave[i] = float(amp * std::sin(2.0 * kPi * freq * double(i) / spec.sample_rate + phase));
        }
        t.noalias() += spatial.matrix() * wave.matrix().transpose();
    }
    double power = t.cast<double>().array().square().mean();
    if (power > 0) t *= float(1.0 / std::sqrt(power));
    return t;
}

void add_noise(RowMatrixXf& w, float noise_std, Rng& rng) {
    if (noise_std <= 0) return;
    for (Index c = 0; c < w.rows(); ++c) {
        for (Index t = 0; t < w.cols(); ++t) {
            w(c, t) += noise_std * float(rng.normal());
        }
    }
}

}  // namespace

std::vector<RowMatrixXf> synthetic_templates(const SyntheticSpec& spec) {
    validate(spec);
    std::vector<RowMatrixXf> out;
    out.reserve(size_t(spec.classes));
    for (int k = 0; k < spec.classes; ++k) out.push_back(make_template(spec, k));
    return out;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
    validate(spec);
    Dataset ds;
    PhonemeInventory full = PhonemeInventory::arpabet39();
    if (spec.classes > full.size()) {
        throw ConfigError("synthetic: classes exceeds the " + std::to_string(full.size()) +
                          "-symbol inventory");
    }
    if (spec.classes == full.size()) {
        ds.inventory = full;
    } else {
        // small fixtures are honest k-class problems, not 39-class ones
        // with empty classes
        std::vector<std::string> head(full.symbols().begin(),
                                      full.symbols().begin() + spec.classes);
        ds.inventory = PhonemeInventory::from_symbols(std::move(head));
    }
    ds.channels = spec.channels;
    ds.samples = spec.samples;

    float noise_std =
        std::isinf(spec.snr) ? 0.0f : float(std::sqrt(1.0 / spec.snr));

    Eigen::ArrayXf gain = Eigen::ArrayXf::Ones(spec.channels);
    Eigen::ArrayXf offset = Eigen::ArrayXf::Zero(spec.channels);
    if (spec.session_drift > 0) {
        Rng drift_rng(substream(spec.seed, kTagDrift));
        for (Index c = 0; c < spec.channels; ++c) {
            gain[c] = float(1.0 + spec.session_drift * drift_rng.uniform(-1.0, 1.0));
            offset[c] = float(spec.session_drift * drift_rng.uniform(-1.0, 1.0));
        }
    }

    int n_eval = std::max(1, spec.per_class / 2);
    ds.windows.reserve(size_t(spec.classes) * size_t(spec.per_class + 2 * n_eval));

    for (int k = 0; k < spec.classes; ++k) {
        RowMatrixXf tmpl = make_template(spec, k);
        for (int i = 0; i < spec.per_class; ++i) {
            Rng rng(substream(spec.seed, kTagTrainNoise, std::uint64_t(k), std::uint64_t(i)));
            PhonemeWindow w;
            w.data = tmpl;
            add_noise(w.data, noise_std, rng);
            w.label = k;
            w.split = Split::train;
            w.session = "ses-train";
            ds.windows.push_back(std::move(w));
        }
    }
    // validation and test carry the SAME raw eval-session windows; only the
    // later split-specific standardization makes them differ
    std::vector<PhonemeWindow> eval_windows;
    for (int k = 0; k < spec.classes; ++k) {
        RowMatrixXf tmpl = make_template(spec, k);
        for (int i = 0; i < n_eval; ++i) {
            Rng rng(substream(spec.seed, kTagEvalNoise, std::uint64_t(k), std::uint64_t(i)));
            PhonemeWindow w;
            w.data = tmpl;
            add_noise(w.data, noise_std, rng);
            w.data = ((w.data.array().colwise() * gain).colwise() + offset).matrix();
            w.label = k;
            w.session = "ses-eval";
            eval_windows.push_back(std::move(w));
        }
    }
    for (const auto& w : eval_windows) {
        PhonemeWindow v = w;
        v.split = Split::validation;
        ds.windows.push_back(std::move(v));
    }
    for (auto& w : eval_windows) {
        w.split = Split::test;
        ds.windows.push_back(std::move(w));
    }
    return ds;
}

}  // namespace megdec
