#pragma once

// Central-difference gradient oracle shared by the numerics tests. Each case
// wires an op into a scalar loss (a fixed pseudo-random weighted sum of the
// op's output) and compares the tape's gradients against finite differences
// computed through the plain forward path.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "doctest.h"
#include "laneatt/tensor.hpp"

namespace testsupport {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Deterministic values in [-1, 1] for constructing test inputs.
inline std::vector<double> random_values(int n, std::uint64_t seed) {
    std::uint64_t state = seed;
    std::vector<double> out(static_cast<std::size_t>(n));
    for (auto& v : out) {
        v = 2.0 * (static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53) - 1.0;
    }
    return out;
}

struct GradCase {
    // All op inputs; `diff` lists the indices whose gradients are checked.
    std::vector<laneatt::Tensor> inputs;
    std::vector<int> diff;
    std::function<laneatt::Tensor(laneatt::Tape*, std::vector<laneatt::Tensor>&)> op;
    double h = 1e-5;
    double rel_tol = 1e-4;
    double abs_tol = 1e-7;
};

inline void run_gradcheck(GradCase c) {
    using laneatt::Tape;
    using laneatt::Tensor;

    // Probe the output shape, then fix the loss weights.
    std::vector<Tensor> probe = c.inputs;
    Tensor probe_out = c.op(nullptr, probe);
    Tensor weights(probe_out.shape, random_values(probe_out.size(), 0xABCDEF12345ULL));

    auto loss_value = [&](const std::vector<Tensor>& inputs) {
        std::vector<Tensor> copy = inputs;
        Tensor out = c.op(nullptr, copy);
        double acc = 0.0;
        for (int i = 0; i < out.size(); ++i) {
            acc += out.data[static_cast<std::size_t>(i)] * weights.data[static_cast<std::size_t>(i)];
        }
        return acc;
    };

    // Analytic gradients through the tape.
    std::vector<Tensor> tracked = c.inputs;
    Tape tape;
    for (int idx : c.diff) tape.watch(tracked[static_cast<std::size_t>(idx)]);
    Tensor out = c.op(&tape, tracked);
    Tensor loss = laneatt::sum_all(&tape, laneatt::mul(&tape, out, weights));
    tape.backward(loss);

    for (int idx : c.diff) {
        const Tensor& input = tracked[static_cast<std::size_t>(idx)];
        const std::vector<double>& analytic = tape.grad(input);
        REQUIRE(static_cast<int>(analytic.size()) == input.size());
        for (int j = 0; j < input.size(); ++j) {
            std::vector<Tensor> shifted = c.inputs;
            auto& slot = shifted[static_cast<std::size_t>(idx)].data[static_cast<std::size_t>(j)];
            const double saved = slot;
            slot = saved + c.h;
            const double up = loss_value(shifted);
            slot = saved - c.h;
            const double down = loss_value(shifted);
            const double fd = (up - down) / (2.0 * c.h);
            const double an = analytic[static_cast<std::size_t>(j)];
            const double tol = std::max(c.abs_tol, c.rel_tol * std::max(std::abs(fd), std::abs(an)));
            INFO("input ", idx, " element ", j, ": fd=", fd, " analytic=", an);
            CHECK(std::abs(fd - an) <= tol);
        }
    }
}

}  // namespace testsupport
