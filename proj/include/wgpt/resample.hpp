#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "wgpt/wav.hpp"

namespace wgpt {

// Hann-windowed sinc resampler. Output length is round(n * target / source);
// equal rates pass through bit-identically. The kernel half-width is 32
// output-rate zero crossings (>= 64 taps), widened by the decimation factor
// when downsampling so the cutoff stays below the target Nyquist.
inline AudioBuffer resample(const AudioBuffer& buf, int target_rate) {
    if (buf.sample_rate < 8000)
        fail_contract("resample: source rate ", buf.sample_rate, " below 8000 Hz");
    if (target_rate <= 0) fail_contract("resample: bad target rate ", target_rate);
    if (buf.sample_rate == target_rate) return buf;

    const double ratio = static_cast<double>(target_rate) / buf.sample_rate;
    const double cutoff = 0.45 * std::min(1.0, ratio); // cycles per source sample
    const double half_width = 32.0 / std::min(1.0, ratio);
    const std::int64_t n = static_cast<std::int64_t>(buf.samples.size());
    const std::int64_t out_n = std::llround(static_cast<double>(n) * ratio);

    constexpr double pi = 3.14159265358979323846;
    AudioBuffer out;
    out.sample_rate = target_rate;
    out.samples.resize(static_cast<std::size_t>(out_n));
    for (std::int64_t i = 0; i < out_n; ++i) {
        const double center = static_cast<double>(i) / ratio;
        const std::int64_t lo = static_cast<std::int64_t>(std::ceil(center - half_width));
        const std::int64_t hi = static_cast<std::int64_t>(std::floor(center + half_width));
        double acc = 0.0, norm = 0.0;
        for (std::int64_t j = lo; j <= hi; ++j) {
            const double t = static_cast<double>(j) - center;
            const double x = 2.0 * cutoff * t;
            const double sinc = x == 0.0 ? 1.0 : std::sin(pi * x) / (pi * x);
            const double win = 0.5 * (1.0 + std::cos(pi * t / half_width));
            const double k = sinc * win;
            norm += k;
            if (j >= 0 && j < n) acc += buf.samples[static_cast<std::size_t>(j)] * k;
        }
        out.samples[static_cast<std::size_t>(i)] = norm != 0.0 ? acc / norm : 0.0;
    }
    return out;
}

} // namespace wgpt
