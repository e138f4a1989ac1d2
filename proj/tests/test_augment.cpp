#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "support.hpp"
#include "megdec/augment.hpp"

using namespace megdec;

namespace {

RowMatrixXf distinct_window(Index C, Index T) {
    RowMatrixXf x(C, T);
    for (Index c = 0; c < C; ++c)
        for (Index t = 0; t < T; ++t) x(c, t) = float(c * T + t + 1);
    return x;
}

}  // namespace

TEST_CASE("each augmentation fires at p_apply within two percent over 1e4 windows") {
    AugmentConfig cfg;
    cfg.p_apply = 0.3f;
    cfg.max_shift = 5;
    cfg.max_mask = 8;
    Rng rng(2024);
    const int N = 10000;
    std::array<long long, 6> fired{};
    for (int i = 0; i < N; ++i) {
        RowMatrixXf x = RowMatrixXf::Random(3, 25);
        AugmentTrace tr = apply_augmentations(x, cfg, rng);
        for (size_t j = 0; j < tr.size(); ++j) fired[j] += tr[j] ? 1 : 0;
    }
    for (size_t j = 0; j < fired.size(); ++j) {
        double rate = double(fired[j]) / double(N);
        CHECK(std::abs(rate - 0.3) <= 0.02);
    }
}

TEST_CASE("channel dropout zeroes exactly floor(frac * channels) rows") {
    for (uint64_t seed : {1u, 2u, 3u, 4u}) {
        RowMatrixXf x = RowMatrixXf::Ones(306, 10);
        Rng rng(seed);
        augment_channel_dropout(x, 0.10f, rng);
        int zero_rows = 0;
        for (Index c = 0; c < x.rows(); ++c) {
            float row_max = x.row(c).cwiseAbs().maxCoeff();
            if (row_max == 0.0f) {
                ++zero_rows;
            } else {
                CHECK(x.row(c).minCoeff() == 1.0f);  // untouched rows stay intact
            }
        }
        CHECK(zero_rows == 30);
    }

    // Different seeds drop different channel sets.
    RowMatrixXf a = RowMatrixXf::Ones(306, 4), b = RowMatrixXf::Ones(306, 4);
    Rng r1(7), r2(8);
    augment_channel_dropout(a, 0.10f, r1);
    augment_channel_dropout(b, 0.10f, r2);
    CHECK((a - b).cwiseAbs().maxCoeff() > 0.0f);

    // Fractions below one channel are a no-op.
    RowMatrixXf tiny = RowMatrixXf::Ones(5, 3);
    Rng r3(9);
    augment_channel_dropout(tiny, 0.10f, r3);
    CHECK(tiny.minCoeff() == 1.0f);
}

TEST_CASE("temporal shift rotates all channels together and preserves values") {
    const Index C = 4, T = 30, max_shift = 6;
    for (uint64_t seed = 0; seed < 12; ++seed) {
        RowMatrixXf x = distinct_window(C, T);
        RowMatrixXf y = x;
        Rng rng(seed);
        augment_temporal_shift(y, max_shift, rng);

        // Recover the shift from where the first value of row 0 landed.
        Index s = -1;
        for (Index t = 0; t < T; ++t) {
            if (y(0, t) == x(0, 0)) {
                s = t;
                break;
            }
        }
        REQUIRE(s >= 0);
        CHECK((s <= max_shift || s >= T - max_shift));
        for (Index c = 0; c < C; ++c) {
            for (Index t = 0; t < T; ++t) {
                CHECK(y(c, (t + s) % T) == x(c, t));
            }
        }
        // Same multiset per row follows from the exact rotation check above.
    }
}

TEST_CASE("temporal mask zeroes one contiguous run of bounded length") {
    const Index C = 3, T = 40, max_mask = 7;
    for (uint64_t seed = 0; seed < 12; ++seed) {
        RowMatrixXf x = RowMatrixXf::Ones(C, T);
        Rng rng(seed + 100);
        augment_temporal_mask(x, max_mask, rng);

        std::vector<Index> zero_cols;
        for (Index t = 0; t < T; ++t) {
            bool col_zero = x.col(t).cwiseAbs().maxCoeff() == 0.0f;
            bool col_one = x.col(t).minCoeff() == 1.0f;
            CHECK((col_zero || col_one));  // columns are all-or-nothing
            if (col_zero) zero_cols.push_back(t);
        }
        REQUIRE(!zero_cols.empty());
        CHECK(Index(zero_cols.size()) <= max_mask);
        CHECK(zero_cols.back() - zero_cols.front() + 1 == Index(zero_cols.size()));
    }
}

TEST_CASE("gaussian noise tracks the window std") {
    Rng rng(55);
    RowMatrixXf x(100, 200);
    for (Index c = 0; c < x.rows(); ++c)
        for (Index t = 0; t < x.cols(); ++t) x(c, t) = float(rng.normal() * 2.0);
    double base_mean = x.cast<double>().mean();
    double base_sd = std::sqrt((x.cast<double>().array() - base_mean).square().mean());

    RowMatrixXf y = x;
    Rng nrng(56);
    augment_gaussian_noise(y, 0.5f, nrng);
    RowMatrixXf d = y - x;
    double mean = d.cast<double>().mean();
    double sd = std::sqrt((d.cast<double>().array() - mean).square().mean());
    CHECK(std::abs(mean) < 0.02);
    CHECK(sd == doctest::Approx(0.5 * base_sd).epsilon(0.03));

    // A flat window has zero std, so noise has nothing to scale against.
    RowMatrixXf flat = RowMatrixXf::Constant(4, 9, 3.0f);
    augment_gaussian_noise(flat, 0.5f, nrng);
    CHECK((flat.array() == 3.0f).all());
}

TEST_CASE("amplitude scale applies one global factor inside the range") {
    RowMatrixXf x = distinct_window(3, 12);
    RowMatrixXf y = x;
    Rng rng(77);
    augment_amplitude_scale(y, 0.9f, 1.1f, rng);
    float f = y(0, 0) / x(0, 0);
    CHECK(f >= 0.9f);
    CHECK(f <= 1.1f);
    for (Index c = 0; c < x.rows(); ++c)
        for (Index t = 0; t < x.cols(); ++t)
            CHECK(y(c, t) == doctest::Approx(f * x(c, t)).epsilon(1e-6));
}

TEST_CASE("band scaling with unit factors is the identity within 1e-5") {
    AugmentConfig cfg;
    cfg.band_lo = 1.0f;
    cfg.band_hi = 1.0f;
    Rng rng(31);
    RowMatrixXf x = RowMatrixXf::Random(6, 125);  // odd length round trip
    RowMatrixXf y = x;
    augment_frequency_bands(y, cfg, rng);
    CHECK((y - x).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("band scaling multiplies in-band sinusoids and spares out-of-band ones") {
    AugmentConfig cfg;
    cfg.band_count = 10;
    cfg.band_max_hz = 100.0f;
    cfg.band_pick_min = 10;  // force every band to be picked
    cfg.band_pick_max = 10;
    cfg.band_lo = 2.0f;
    cfg.band_hi = 2.0f;
    cfg.sample_rate = 250.0f;

    const Index T = 125;  // 2 Hz per bin
    auto sinusoid = [&](double bin) {
        RowMatrixXf x(1, T);
        for (Index t = 0; t < T; ++t)
            x(0, t) = float(std::sin(2.0 * 3.14159265358979323846 * bin * double(t) / double(T)));
        return x;
    };

    RowMatrixXf low = sinusoid(10);  // 20 Hz, inside [0, 100]
    RowMatrixXf low_scaled = low;
    Rng r1(41);
    augment_frequency_bands(low_scaled, cfg, r1);
    CHECK((low_scaled - 2.0f * low).cwiseAbs().maxCoeff() < 1e-4f);

    RowMatrixXf high = sinusoid(55);  // 110 Hz, above band_max_hz
    RowMatrixXf high_kept = high;
    Rng r2(42);
    augment_frequency_bands(high_kept, cfg, r2);
    CHECK((high_kept - high).cwiseAbs().maxCoeff() < 1e-4f);
}

TEST_CASE("pipeline gates honour enabled, zero and one, and reject bad p") {
    RowMatrixXf x = distinct_window(4, 20);
    RowMatrixXf orig = x;

    AugmentConfig cfg;
    cfg.enabled = false;
    Rng r1(1);
    AugmentTrace tr = apply_augmentations(x, cfg, r1);
    CHECK(std::none_of(tr.begin(), tr.end(), [](bool b) { return b; }));
    CHECK((x - orig).cwiseAbs().maxCoeff() == 0.0f);

    cfg.enabled = true;
    cfg.p_apply = 0.0f;
    tr = apply_augmentations(x, cfg, r1);
    CHECK(std::none_of(tr.begin(), tr.end(), [](bool b) { return b; }));
    CHECK((x - orig).cwiseAbs().maxCoeff() == 0.0f);

    cfg.p_apply = 1.0f;
    cfg.max_shift = 3;
    cfg.max_mask = 4;
    tr = apply_augmentations(x, cfg, r1);
    CHECK(std::all_of(tr.begin(), tr.end(), [](bool b) { return b; }));
    CHECK((x - orig).cwiseAbs().maxCoeff() > 0.0f);

    cfg.p_apply = 1.5f;
    CHECK_THROWS_AS(apply_augmentations(x, cfg, r1), ConfigError);
}

TEST_CASE("the full pipeline is deterministic under a fixed rng") {
    AugmentConfig cfg;
    cfg.p_apply = 0.7f;
    cfg.max_shift = 4;
    cfg.max_mask = 6;
    RowMatrixXf a = distinct_window(8, 50);
    RowMatrixXf b = a;
    Rng r1(90), r2(90);
    AugmentTrace ta = apply_augmentations(a, cfg, r1);
    AugmentTrace tb = apply_augmentations(b, cfg, r2);
    CHECK(ta == tb);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0f);
}
