#pragma once

#include <unsupported/Eigen/FFT>

#include <complex>
#include <vector>

#include "megdec/tensor.hpp"

namespace megdec {

inline Index fft_bins(Index n) { return n / 2 + 1; }

namespace detail {

template <typename S>
Eigen::FFT<S>& fft_engine() {
    // plans are cached per transform size inside the engine
    static thread_local Eigen::FFT<S> engine;
    return engine;
}

}  // namespace detail

/// Real forward FFT: n samples -> n/2+1 complex bins (the rest of the
/// spectrum is the conjugate mirror and is dropped).
template <typename S>
std::vector<std::complex<S>> rfft(const S* x, Index n) {
    if (n < 1) throw DimensionError("rfft: empty input");
    std::vector<S> in(x, x + n);
    std::vector<std::complex<S>> full;
    detail::fft_engine<S>().fwd(full, in);
    full.resize(size_t(fft_bins(n)));
    return full;
}

/// Inverse of rfft: rebuilds the full conjugate-symmetric spectrum and
/// takes the real part of the complex inverse, which is exact for any n.
template <typename S>
void irfft(const std::vector<std::complex<S>>& half, Index n, S* out) {
    Index bins = fft_bins(n);
    if (Index(half.size()) != bins) {
        throw DimensionError("irfft: expected " + std::to_string(bins) + " bins for length " +
                             std::to_string(n) + ", got " + std::to_string(half.size()));
    }
    std::vector<std::complex<S>> full(static_cast<size_t>(n));
    for (Index k = 0; k < bins; ++k) full[size_t(k)] = half[size_t(k)];
    for (Index k = bins; k < n; ++k) full[size_t(k)] = std::conj(half[size_t(n - k)]);
    std::vector<std::complex<S>> time;
    detail::fft_engine<S>().inv(time, full);
    for (Index i = 0; i < n; ++i) out[i] = time[size_t(i)].real();
}

inline Index stft_frames(Index T, Index n_fft, Index hop, const char* op = "stft") {
    if (hop < 1) throw ConfigError(std::string(op) + ": hop must be >= 1");
    if (n_fft < 1 || n_fft > T) {
        throw DimensionError(std::string(op) + ": window length " + std::to_string(n_fft) +
                             " does not fit " + std::to_string(T) + " samples");
    }
    return (T - n_fft) / hop + 1;
}

/// Magnitude spectrogram of one signal with a rectangular window:
/// rows are frequency bins (n_fft/2+1), columns are frames.
template <typename S>
RowMatrix<S> stft_magnitude(const S* x, Index T, Index n_fft, Index hop) {
    Index frames = stft_frames(T, n_fft, hop);
    Index bins = fft_bins(n_fft);
    RowMatrix<S> mag(bins, frames);
    for (Index f = 0; f < frames; ++f) {
        auto spec = rfft(x + f * hop, n_fft);
        for (Index k = 0; k < bins; ++k) mag(k, f) = std::abs(spec[size_t(k)]);
    }
    return mag;
}

}  // namespace megdec
