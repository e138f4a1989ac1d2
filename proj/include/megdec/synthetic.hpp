#pragma once

#include <vector>

#include "megdec/dataset.hpp"

namespace megdec {

/// Parameters of the synthetic dataset generator. Each class gets a fixed
/// smooth spatiotemporal template (a few low-frequency sinusoids with
/// Gaussian spatial profiles, normalized to unit power); windows are the
/// template plus white noise of power 1/snr, so template-to-noise power is
/// snr and snr = inf means noiseless.
struct SyntheticSpec {
    int classes = 39;
    int per_class = 200;  // train windows per class; val/test get half each
    double snr = 0.5;
    std::uint64_t seed = 7;
    Index channels = 306;
    Index samples = 125;
    double sample_rate = 250.0;
    // When > 0, the evaluation-session windows (validation/test) are passed
    // through a fixed per-channel gain/offset drawn from U(1-d, 1+d) and
    // U(-d, d). Validation and test stay raw-identical; the drift is what
    // split-specific standardization later has to absorb.
    double session_drift = 0.0;
};

Dataset generate_synthetic(const SyntheticSpec& spec);

/// The class templates the generator used, recomputable from the seed alone.
std::vector<RowMatrixXf> synthetic_templates(const SyntheticSpec& spec);

}  // namespace megdec
