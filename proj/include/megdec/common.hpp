#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace megdec {

// ----------------------------- errors -----------------------------
// One exception family; the CLI maps UsageError/ConfigError/ParseError to
// exit code 2 and everything else to 1.

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct UsageError : Error {
    using Error::Error;
};

struct ParseError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct NumericFault : Error {
    using Error::Error;
};

// ----------------------------- seeding -----------------------------

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and up to three tags
// (epoch, repeat, sample index, ...). Stable across platforms.
inline uint64_t substream(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t h = splitmix64(seed ^ 0x6d656764656331ull);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    h = splitmix64(h ^ c);
    return h;
}

// Deterministic RNG used everywhere instead of std distributions, whose
// sequences are not pinned by the standard.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(splitmix64(seed)) {}

    uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return lo + int64_t(next_u64() % uint64_t(hi - lo + 1));
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Fisher-Yates
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int64_t i = int64_t(v.size()) - 1; i > 0; --i) {
            std::swap(v[size_t(i)], v[size_t(uniform_int(0, i))]);
        }
    }

    // k distinct values from [0, n), in draw order
    std::vector<int> sample_without_replacement(int n, int k) {
        std::vector<int> pool(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) pool[size_t(i)] = i;
        std::vector<int> out;
        out.reserve(size_t(k));
        for (int i = 0; i < k; ++i) {
            int64_t j = uniform_int(i, n - 1);
            std::swap(pool[size_t(i)], pool[size_t(j)]);
            out.push_back(pool[size_t(i)]);
        }
        return out;
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ----------------------------- environment knobs -----------------------------

inline int env_threads() {
    const char* v = std::getenv("MEGDEC_THREADS");
    if (!v) return 1;
    int n = std::atoi(v);
    return n < 1 ? 1 : n;
}

inline bool env_deterministic() {
    const char* v = std::getenv("MEGDEC_DETERMINISTIC");
    if (!v) return true;
    return std::string(v) != "0";
}

// Splits [0, n) into contiguous chunks, one per worker. Results must be
// combined by the caller in chunk order so the reduction stays deterministic.
template <typename Fn>
void parallel_chunks(int64_t n, Fn&& fn) {
    int workers = env_threads();
    if (workers <= 1 || n < 2 * workers) {
        fn(int64_t(0), n, 0);
        return;
    }
    int64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        int64_t lo = w * chunk;
        int64_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&fn, lo, hi, w] { fn(lo, hi, w); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace megdec
