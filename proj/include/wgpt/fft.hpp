#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "wgpt/common.hpp"

namespace wgpt {

// In-place iterative radix-2 Cooley-Tukey FFT. n must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) fail_contract("fft: length ", n, " is not a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * 3.14159265358979323846 / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const std::complex<double> u = a[i + j];
                const std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

// Power spectrum |X_k|^2 for k = 0..n/2 of a real signal zero-padded to n.
inline std::vector<double> power_spectrum(const double* x, std::size_t len, std::size_t n) {
    std::vector<std::complex<double>> buf(n, {0.0, 0.0});
    for (std::size_t i = 0; i < len && i < n; ++i) buf[i] = std::complex<double>(x[i], 0.0);
    fft_inplace(buf);
    std::vector<double> out(n / 2 + 1);
    for (std::size_t k = 0; k <= n / 2; ++k) out[k] = std::norm(buf[k]);
    return out;
}

} // namespace wgpt
