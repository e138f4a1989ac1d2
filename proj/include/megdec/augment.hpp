#pragma once

#include <array>

#include "megdec/tensor.hpp"

namespace megdec {

/// Training-time augmentation settings. Each of the six augmentations is
/// gated by an independent Bernoulli(p_apply) draw and they run in the
/// fixed order noise, shift, mask, channel dropout, amplitude, band scale.
struct AugmentConfig {
    bool enabled = true;
    float p_apply = 0.3f;
    float noise_rel_std = 0.01f;   // times the whole-window std
    Index max_shift = 10;          // +-40 ms at 250 Hz
    Index max_mask = 20;           // up to 80 ms at 250 Hz
    float channel_drop_frac = 0.10f;
    float amp_lo = 0.9f;
    float amp_hi = 1.1f;
    float band_lo = 0.8f;
    float band_hi = 1.2f;
    float band_max_hz = 100.0f;
    int band_count = 10;           // contiguous bands partitioning [0, band_max_hz]
    int band_pick_min = 1;
    int band_pick_max = 3;
    float sample_rate = 250.0f;
};

void augment_gaussian_noise(RowMatrixXf& x, float rel_std, Rng& rng);
void augment_temporal_shift(RowMatrixXf& x, Index max_shift, Rng& rng);
void augment_temporal_mask(RowMatrixXf& x, Index max_mask, Rng& rng);
void augment_channel_dropout(RowMatrixXf& x, float drop_frac, Rng& rng);
void augment_amplitude_scale(RowMatrixXf& x, float lo, float hi, Rng& rng);
void augment_frequency_bands(RowMatrixXf& x, const AugmentConfig& cfg, Rng& rng);

/// Which augmentations fired for one window, in pipeline order.
using AugmentTrace = std::array<bool, 6>;

AugmentTrace apply_augmentations(RowMatrixXf& x, const AugmentConfig& cfg, Rng& rng);

}  // namespace megdec
