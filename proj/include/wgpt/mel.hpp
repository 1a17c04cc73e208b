#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wgpt/fft.hpp"
#include "wgpt/io.hpp"
#include "wgpt/tensor.hpp"
#include "wgpt/wav.hpp"

namespace wgpt {

// 24 kHz audio framed at 75 Hz: hop 320 samples, 40 ms (960-sample) windows,
// FFT 1024, 64 HTK-mel triangular filters over 0..12 kHz with unit peaks,
// natural log with a 1e-10 floor. Frame t (1-based) sees only samples up to
// t * hop: the analysis window ends exactly at the frame's anchor, zero
// lookahead.
namespace melspec {
constexpr int kSampleRate = 24000;
constexpr int kHop = 320;
constexpr int kWindow = 960;
constexpr int kFft = 1024;
constexpr int kBins = 64;
constexpr double kFreqLo = 0.0;
constexpr double kFreqHi = 12000.0;
constexpr double kLogFloor = 1e-10;
constexpr int kFrameRate = 75;
constexpr double kStdEps = 1e-5;

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }
} // namespace melspec

// T x 64 log-mel frames at 75 Hz. stats_id records which NormalizationStats
// were applied ("raw" = none yet).
struct MelFrameSequence {
    Tensor frames;
    std::string stats_id = "raw";
    int frame_rate = melspec::kFrameRate;

    std::int64_t n_frames() const { return frames.numel() == 0 ? 0 : frames.rows(); }
    bool raw() const { return stats_id == "raw"; }
};

struct NormalizationStats {
    std::vector<double> mean;  // per bin
    std::vector<double> stddev;
    std::string corpus_id;
};

namespace detail {

// Triangular filterbank, rows = mel bins, cols = rfft bins. Unit-peak
// triangles on HTK-mel-spaced centers.
inline const std::vector<double>& mel_filterbank() {
    static const std::vector<double> fb = [] {
        using namespace melspec;
        const int n_fft_bins = kFft / 2 + 1;
        std::vector<double> filters(static_cast<std::size_t>(kBins) * n_fft_bins, 0.0);
        std::vector<double> edges(kBins + 2);
        const double mel_lo = hz_to_mel(kFreqLo), mel_hi = hz_to_mel(kFreqHi);
        for (int i = 0; i < kBins + 2; ++i)
            edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (kBins + 1));
        for (int b = 0; b < kBins; ++b) {
            const double left = edges[b], center = edges[b + 1], right = edges[b + 2];
            for (int k = 0; k < n_fft_bins; ++k) {
                const double f = static_cast<double>(k) * kSampleRate / kFft;
                double w = 0.0;
                if (f > left && f < center)
                    w = (f - left) / (center - left);
                else if (f >= center && f < right)
                    w = (right - f) / (right - center);
                filters[static_cast<std::size_t>(b) * n_fft_bins + k] = w;
            }
        }
        return filters;
    }();
    return fb;
}

inline const std::vector<double>& hann_window() {
    static const std::vector<double> win = [] {
        std::vector<double> w(melspec::kWindow);
        for (int i = 0; i < melspec::kWindow; ++i)
            w[i] = 0.5 * (1.0 - std::cos(2.0 * 3.14159265358979323846 * i / melspec::kWindow));
        return w;
    }();
    return win;
}

} // namespace detail

// Center frequencies (Hz) of the 64 mel filters; the peak of filter b.
inline std::vector<double> mel_filter_centers_hz() {
    using namespace melspec;
    std::vector<double> centers(kBins);
    const double mel_lo = hz_to_mel(kFreqLo), mel_hi = hz_to_mel(kFreqHi);
    for (int b = 0; b < kBins; ++b)
        centers[b] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * (b + 1) / (kBins + 1));
    return centers;
}

// Causal log-mel frames: frame t (1-based) covers samples (t*320 - 960, t*320],
// left-zero-padded near the start. T = floor(n / 320).
inline MelFrameSequence causal_log_mel(const AudioBuffer& buf) {
    using namespace melspec;
    if (buf.sample_rate != kSampleRate)
        fail_contract("causal_log_mel: expected ", kSampleRate, " Hz input, got ", buf.sample_rate);
    const std::int64_t n = static_cast<std::int64_t>(buf.samples.size());
    const std::int64_t T = n / kHop;
    const auto& filters = detail::mel_filterbank();
    const auto& win = detail::hann_window();
    const int n_fft_bins = kFft / 2 + 1;

    if (T == 0) fail_contract("causal_log_mel: input shorter than one hop (", n, " samples)");
    MelFrameSequence seq;
    seq.frames = Tensor({T, kBins});

    std::vector<double> frame(kWindow);
    for (std::int64_t t = 1; t <= T; ++t) {
        const std::int64_t end = t * kHop; // exclusive in 0-based indexing
        for (int i = 0; i < kWindow; ++i) {
            const std::int64_t idx = end - kWindow + i;
            const double s = (idx >= 0 && idx < n) ? buf.samples[static_cast<std::size_t>(idx)] : 0.0;
            frame[static_cast<std::size_t>(i)] = s * win[static_cast<std::size_t>(i)];
        }
        const std::vector<double> power = power_spectrum(frame.data(), frame.size(), kFft);
        for (int b = 0; b < kBins; ++b) {
            double acc = 0.0;
            const double* f = filters.data() + static_cast<std::size_t>(b) * n_fft_bins;
            for (int k = 0; k < n_fft_bins; ++k) acc += f[k] * power[static_cast<std::size_t>(k)];
            seq.frames.at(t - 1, b) = std::log(std::max(acc, kLogFloor));
        }
    }
    return seq;
}

// Streaming per-bin mean/variance accumulation. merge() is deterministic:
// callers combine per-file accumulators in file order.
class WelfordAccumulator {
public:
    WelfordAccumulator() : count_(0), mean_(melspec::kBins, 0.0), m2_(melspec::kBins, 0.0) {}

    void add(const MelFrameSequence& seq) {
        if (!seq.raw()) fail_contract("fit_normalization: sequence '", seq.stats_id, "' already normalized");
        for (std::int64_t t = 0; t < seq.n_frames(); ++t) {
            count_ += 1;
            for (int b = 0; b < melspec::kBins; ++b) {
                const double x = seq.frames.at(t, b);
                const double d = x - mean_[b];
                mean_[b] += d / static_cast<double>(count_);
                m2_[b] += d * (x - mean_[b]);
            }
        }
    }

    void merge(const WelfordAccumulator& o) {
        if (o.count_ == 0) return;
        if (count_ == 0) {
            *this = o;
            return;
        }
        const double na = static_cast<double>(count_), nb = static_cast<double>(o.count_);
        for (int b = 0; b < melspec::kBins; ++b) {
            const double delta = o.mean_[b] - mean_[b];
            mean_[b] += delta * nb / (na + nb);
            m2_[b] += o.m2_[b] + delta * delta * na * nb / (na + nb);
        }
        count_ += o.count_;
    }

    std::int64_t frames() const { return count_; }

    NormalizationStats finalize(std::string corpus_id) const {
        if (count_ < 2) fail_contract("fit_normalization: needs at least 2 frames, saw ", count_);
        NormalizationStats stats;
        stats.corpus_id = std::move(corpus_id);
        stats.mean = mean_;
        stats.stddev.resize(melspec::kBins);
        for (int b = 0; b < melspec::kBins; ++b)
            stats.stddev[b] = std::max(std::sqrt(m2_[b] / static_cast<double>(count_)), melspec::kStdEps);
        return stats;
    }

private:
    std::int64_t count_;
    std::vector<double> mean_;
    std::vector<double> m2_;
};

inline NormalizationStats fit_normalization(const std::vector<const MelFrameSequence*>& corpus,
                                            std::string corpus_id) {
    if (corpus.empty()) fail_contract("fit_normalization: empty corpus");
    WelfordAccumulator acc;
    for (const auto* seq : corpus) acc.add(*seq);
    return acc.finalize(std::move(corpus_id));
}

inline MelFrameSequence apply_normalization(const MelFrameSequence& seq, const NormalizationStats& stats) {
    if (!seq.raw())
        fail_contract("apply_normalization: frames already normalized with '", seq.stats_id, "'");
    MelFrameSequence out;
    out.frames = Tensor(seq.frames.shape());
    out.stats_id = stats.corpus_id.empty() ? "normalized" : stats.corpus_id;
    for (std::int64_t t = 0; t < seq.n_frames(); ++t)
        for (int b = 0; b < melspec::kBins; ++b)
            out.frames.at(t, b) = (seq.frames.at(t, b) - stats.mean[b]) / stats.stddev[b];
    return out;
}

// ---- WGM1 / WGS1 file formats ----

inline void save_mel(const std::filesystem::path& path, const MelFrameSequence& seq) {
    ByteWriter w;
    w.magic("WGM1");
    w.u32(static_cast<std::uint32_t>(seq.n_frames()));
    w.u32(melspec::kBins);
    w.u32(seq.raw() ? 0u : 1u);
    for (std::int64_t i = 0; i < seq.frames.numel(); ++i) w.f32(static_cast<float>(seq.frames[i]));
    w.save(path);
}

inline MelFrameSequence load_mel(const std::filesystem::path& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("WGM1");
    const std::uint32_t n_frames = r.u32();
    const std::uint32_t n_bins = r.u32();
    if (n_bins != melspec::kBins) r.err("expected 64 mel bins, got " + std::to_string(n_bins));
    if (n_frames == 0) r.err("zero frames");
    const std::uint32_t flag = r.u32();
    if (flag > 1) r.err("bad stats flag " + std::to_string(flag));
    MelFrameSequence seq;
    seq.frames = Tensor({static_cast<std::int64_t>(n_frames), melspec::kBins});
    for (std::int64_t i = 0; i < seq.frames.numel(); ++i) seq.frames[i] = r.f32();
    seq.stats_id = flag == 0 ? "raw" : "normalized";
    return seq;
}

inline void save_stats(const std::filesystem::path& path, const NormalizationStats& stats) {
    ByteWriter w;
    w.magic("WGS1");
    w.u32(melspec::kBins);
    for (double m : stats.mean) w.f64(m);
    for (double s : stats.stddev) w.f64(s);
    w.str(stats.corpus_id);
    w.save(path);
}

inline NormalizationStats load_stats(const std::filesystem::path& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("WGS1");
    const std::uint32_t n_bins = r.u32();
    if (n_bins != melspec::kBins) r.err("expected 64 bins, got " + std::to_string(n_bins));
    NormalizationStats stats;
    stats.mean.resize(n_bins);
    stats.stddev.resize(n_bins);
    for (auto& m : stats.mean) m = r.f64();
    for (auto& s : stats.stddev) {
        s = r.f64();
        if (!(s > 0.0)) r.err("non-positive stddev");
    }
    stats.corpus_id = r.str();
    return stats;
}

} // namespace wgpt
