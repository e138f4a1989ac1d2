#include "megdec/augment.hpp"

#include <algorithm>
#include <cmath>

#include "megdec/fft.hpp"

namespace megdec {

void augment_gaussian_noise(RowMatrixXf& x, float rel_std, Rng& rng) {
    double mean = x.cast<double>().mean();
    double var = (x.cast<double>().array() - mean).square().mean();
    float sd = rel_std * float(std::sqrt(var));
    if (sd <= 0) return;
    for (Index c = 0; c < x.rows(); ++c) {
        for (Index t = 0; t < x.cols(); ++t) {
            x(c, t) += sd * float(rng.normal());
        }
    }
}

void augment_temporal_shift(RowMatrixXf& x, Index max_shift, Rng& rng) {
    Index T = x.cols();
    Index s = Index(rng.uniform_int(-max_shift, max_shift));
    s = ((s % T) + T) % T;
    if (s == 0) return;
    RowMatrixXf out(x.rows(), T);
    // value at t moves to t+s (circular): out[:, t] = x[:, t-s mod T]
    out.rightCols(T - s) = x.leftCols(T - s);
    out.leftCols(s) = x.rightCols(s);
    x = std::move(out);
}

void augment_temporal_mask(RowMatrixXf& x, Index max_mask, Rng& rng) {
    Index T = x.cols();
    Index len = Index(rng.uniform_int(1, std::min(max_mask, T)));
    Index start = Index(rng.uniform_int(0, T - len));
    x.middleCols(start, len).setZero();
}

void augment_channel_dropout(RowMatrixXf& x, float drop_frac, Rng& rng) {
    int k = int(std::floor(double(drop_frac) * double(x.rows())));
    if (k <= 0) return;
    for (int c : rng.sample_without_replacement(int(x.rows()), k)) {
        x.row(c).setZero();
    }
}

void augment_amplitude_scale(RowMatrixXf& x, float lo, float hi, Rng& rng) {
    x *= float(rng.uniform(double(lo), double(hi)));
}

void augment_frequency_bands(RowMatrixXf& x, const AugmentConfig& cfg, Rng& rng) {
    Index T = x.cols();
    Index bins = fft_bins(T);
    int n_pick = int(rng.uniform_int(cfg.band_pick_min,
                                     std::min<int64_t>(cfg.band_pick_max, cfg.band_count)));
    std::vector<int> bands = rng.sample_without_replacement(cfg.band_count, n_pick);
    std::sort(bands.begin(), bands.end());
    std::vector<float> factors(bands.size());
    for (size_t i = 0; i < bands.size(); ++i) {
        factors[i] = float(rng.uniform(double(cfg.band_lo), double(cfg.band_hi)));
    }

    double band_width = double(cfg.band_max_hz) / double(cfg.band_count);
    double hz_per_bin = double(cfg.sample_rate) / double(T);
    std::vector<float> bin_scale(size_t(bins), 1.0f);
    for (size_t i = 0; i < bands.size(); ++i) {
        double lo_hz = bands[i] * band_width;
        double hi_hz = (bands[i] + 1) * band_width;
        for (Index k = 0; k < bins; ++k) {
            double f = k * hz_per_bin;
            bool in_band = f >= lo_hz && (f < hi_hz ||
                                          (bands[i] == cfg.band_count - 1 && f <= hi_hz));
            if (in_band) bin_scale[size_t(k)] = factors[i];
        }
    }

    std::vector<float> row(static_cast<size_t>(T));
    for (Index c = 0; c < x.rows(); ++c) {
        auto spec = rfft(x.row(c).data(), T);
        for (Index k = 0; k < bins; ++k) spec[size_t(k)] *= bin_scale[size_t(k)];
        irfft(spec, T, row.data());
        for (Index t = 0; t < T; ++t) x(c, t) = row[size_t(t)];
    }
}

AugmentTrace apply_augmentations(RowMatrixXf& x, const AugmentConfig& cfg, Rng& rng) {
    AugmentTrace fired{};
    if (!cfg.enabled) return fired;
    if (cfg.p_apply < 0 || cfg.p_apply > 1) {
        throw ConfigError("augment: p_apply must be in [0, 1]");
    }
    auto gate = [&]() { return rng.uniform() < double(cfg.p_apply); };
    if ((fired[0] = gate())) augment_gaussian_noise(x, cfg.noise_rel_std, rng);
    if ((fired[1] = gate())) augment_temporal_shift(x, cfg.max_shift, rng);
    if ((fired[2] = gate())) augment_temporal_mask(x, cfg.max_mask, rng);
    if ((fired[3] = gate())) augment_channel_dropout(x, cfg.channel_drop_frac, rng);
    if ((fired[4] = gate())) augment_amplitude_scale(x, cfg.amp_lo, cfg.amp_hi, rng);
    if ((fired[5] = gate())) augment_frequency_bands(x, cfg, rng);
    return fired;
}

}  // namespace megdec
