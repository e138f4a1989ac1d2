#pragma once

// Shared test helpers: seeded tensor fixtures and a central finite-difference
// gradient checker that every differentiable op is run through.

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "megdec/tensor.hpp"

namespace megtest {

using namespace megdec;

template <typename S>
Tensor<S> random_tensor(const Shape& shape, std::uint64_t seed, S lo = S(-1), S hi = S(1),
                        bool requires_grad = true) {
    Rng rng(substream(seed, 0x7e57));
    Index n = shape_numel(shape);
    ArrayX<S> data(n);
    for (Index i = 0; i < n; ++i) data[i] = S(rng.uniform(double(lo), double(hi)));
    Tensor<S> t = Tensor<S>::from_array(shape, std::move(data));
    t.set_requires_grad(requires_grad);
    return t;
}

/// Central-difference check of d(loss)/d(input) for every grad-requiring
/// input. make_loss must rebuild the graph from the inputs' current data.
/// Probes are random coordinates; ones with structurally tiny analytic
/// gradient still get checked, against a scale-aware floor.
template <typename S>
void check_gradients(std::vector<Tensor<S>> inputs, const std::function<Tensor<S>()>& make_loss,
                     double tol, int probes_per_input = 10, std::uint64_t seed = 99) {
    for (auto& in : inputs) in.zero_grad();
    Tensor<S> loss = make_loss();
    backward(loss);

    const double eps = double(std::numeric_limits<S>::epsilon());
    const double h0 = std::cbrt(eps);
    Rng rng(substream(seed, 0xfd));

    for (size_t t = 0; t < inputs.size(); ++t) {
        Tensor<S>& x = inputs[t];
        if (!x.requires_grad()) continue;
        REQUIRE(x.has_grad());
        ArrayX<S> analytic = x.grad();
        double gmax = double(analytic.abs().maxCoeff());

        std::vector<Index> order(size_t(x.numel()));
        for (Index i = 0; i < x.numel(); ++i) order[size_t(i)] = i;
        rng.shuffle(order);
        int probes = std::min<int>(probes_per_input, int(order.size()));

        for (int p = 0; p < probes; ++p) {
            Index idx = order[size_t(p)];
            S saved = x.array()[idx];
            double h = h0 * std::max(1.0, std::abs(double(saved)));

            x.array()[idx] = S(double(saved) + h);
            double up = double(make_loss().item());
            x.array()[idx] = S(double(saved) - h);
            double down = double(make_loss().item());
            x.array()[idx] = saved;

            double fd = (up - down) / (2.0 * h);
            double ad = double(analytic[idx]);
            double denom = std::max({std::abs(fd), std::abs(ad), 0.05 * std::max(1.0, gmax)});
            double rel = std::abs(fd - ad) / denom;
            INFO("input ", t, " coord ", idx, ": analytic ", ad, " vs fd ", fd);
            CHECK(rel <= tol);
        }
    }
}

inline constexpr double kGradTolF32 = 1e-3;
inline constexpr double kGradTolF64 = 1e-5;

/// Fresh scratch directory under the build tree for file-producing tests.
inline std::filesystem::path scratch_dir(const std::string& name) {
    std::filesystem::path dir = std::filesystem::temp_directory_path() / "megdec_tests" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace megtest
