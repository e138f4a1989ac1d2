#include <doctest.h>

#include <algorithm>
#include <set>

#include "support.hpp"
#include "megdec/common.hpp"

using namespace megdec;

TEST_CASE("rng is reproducible across instances") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("uniform stays in [0, 1) and covers the range") {
    Rng rng(7);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 20000; ++i) {
        double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
}

TEST_CASE("uniform_int bounds are inclusive and all values reachable") {
    Rng rng(3);
    std::set<int64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        int64_t v = rng.uniform_int(-2, 3);
        CHECK(v >= -2);
        CHECK(v <= 3);
        seen.insert(v);
    }
    CHECK(seen.size() == 6);
}

TEST_CASE("normal matches moments roughly") {
    Rng rng(11);
    double sum = 0, sq = 0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
        double z = rng.normal();
        sum += z;
        sq += z * z;
    }
    double mean = sum / n;
    double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("shuffle is a permutation and depends on the seed") {
    std::vector<int> v(100), w;
    for (int i = 0; i < 100; ++i) v[size_t(i)] = i;
    w = v;
    Rng a(1), b(2);
    a.shuffle(v);
    b.shuffle(w);
    CHECK(v != w);
    std::vector<int> sv = v, sw = w;
    std::sort(sv.begin(), sv.end());
    std::sort(sw.begin(), sw.end());
    CHECK(sv == sw);
    CHECK(sv.front() == 0);
    CHECK(sv.back() == 99);
}

TEST_CASE("sample_without_replacement draws k distinct in-range values") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        auto picks = rng.sample_without_replacement(20, 7);
        CHECK(picks.size() == 7);
        std::set<int> uniq(picks.begin(), picks.end());
        CHECK(uniq.size() == 7);
        CHECK(*uniq.begin() >= 0);
        CHECK(*uniq.rbegin() < 20);
    }
}

TEST_CASE("substream separates tags") {
    CHECK(substream(1, 2) != substream(1, 3));
    CHECK(substream(1, 2) != substream(2, 2));
    CHECK(substream(1, 2, 3) != substream(1, 2, 4));
    CHECK(substream(1, 2, 3, 4) != substream(1, 2, 3, 5));
    CHECK(substream(9, 8, 7) == substream(9, 8, 7));
}

TEST_CASE("parallel_chunks covers the range exactly once") {
    std::vector<int> hits(1000, 0);
    parallel_chunks(1000, [&](int64_t lo, int64_t hi, int) {
        for (int64_t i = lo; i < hi; ++i) hits[size_t(i)] += 1;
    });
    CHECK(std::count(hits.begin(), hits.end(), 1) == 1000);
}
