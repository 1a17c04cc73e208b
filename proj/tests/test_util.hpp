#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include <gtest/gtest.h>

#include "wgpt/graph.hpp"
#include "wgpt/optim.hpp"
#include "wgpt/rng.hpp"

namespace wgpt::test {

inline Tensor make_tensor(std::vector<std::int64_t> shape, std::vector<double> data) {
    return Tensor(std::move(shape), std::move(data));
}

inline Tensor random_tensor(std::vector<std::int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Central finite-difference gradient oracle, independent of the reverse-mode
// path it checks. `build` must construct the scalar loss from `params` on the
// tape it is given. Tolerances: relative 1e-4 elementwise, absolute 1e-7
// where the analytic gradient is below 1e-4.
inline void gradcheck(ParameterSet& params, const std::function<Ref(Tape&)>& build,
                      double h = 1e-5, double rtol = 1e-4, double atol = 1e-7) {
    params.zero_grads();
    {
        Tape tape;
        Ref loss = build(tape);
        tape.backward(loss);
    }
    auto eval = [&] {
        Tape tape(false);
        return tape.value(build(tape)).item();
    };
    for (auto& [name, p] : params) {
        for (std::int64_t i = 0; i < p.value.numel(); ++i) {
            const double orig = p.value[i];
            p.value[i] = orig + h;
            const double up = eval();
            p.value[i] = orig - h;
            const double dn = eval();
            p.value[i] = orig;
            const double fd = (up - dn) / (2.0 * h);
            const double ad = p.grad[i];
            if (std::abs(ad) < 1e-4 && std::abs(fd) < 1e-4) {
                ASSERT_NEAR(ad, fd, atol) << name << "[" << i << "] (absolute regime)";
            } else {
                const double rel = std::abs(ad - fd) / std::max(std::abs(ad), std::abs(fd));
                ASSERT_LE(rel, rtol) << name << "[" << i << "]: reverse-mode " << ad
                                     << " vs central-difference " << fd;
            }
        }
    }
}

// Scratch directory unique to the running test, cleaned before use.
inline std::filesystem::path test_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("wgpt_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace wgpt::test
