#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "wgpt/mel.hpp"
#include "wgpt/resample.hpp"
#include "wgpt/wav.hpp"

using namespace wgpt;

namespace {

AudioBuffer sine(double freq, int rate, double seconds, double amp = 1.0) {
    AudioBuffer buf;
    buf.sample_rate = rate;
    const auto n = static_cast<std::size_t>(seconds * rate);
    buf.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        buf.samples[i] = amp * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / rate);
    return buf;
}

} // namespace

TEST(Wav, SilenceRoundTrip) {
    const auto dir = test::test_dir("wav_silence");
    AudioBuffer buf;
    buf.sample_rate = 24000;
    buf.samples.assign(24000, 0.0);
    save_wav(dir / "s.wav", buf);
    AudioBuffer back = load_wav(dir / "s.wav");
    EXPECT_EQ(back.sample_rate, 24000);
    ASSERT_EQ(back.samples.size(), 24000u);
    for (double s : back.samples) ASSERT_EQ(s, 0.0);
}

TEST(Wav, Int16ScalingConvention) {
    // Build a file by hand carrying the extreme sample values.
    const auto dir = test::test_dir("wav_scale");
    ByteWriter w;
    w.magic("RIFF");
    w.u32(36 + 4);
    w.magic("WAVE");
    w.magic("fmt ");
    w.u32(16);
    w.u16(1);
    w.u16(1);
    w.u32(24000);
    w.u32(48000);
    w.u16(2);
    w.u16(16);
    w.magic("data");
    w.u32(4);
    w.u16(static_cast<std::uint16_t>(32767));
    w.u16(static_cast<std::uint16_t>(-32768));
    w.save(dir / "x.wav");

    AudioBuffer buf = load_wav(dir / "x.wav");
    ASSERT_EQ(buf.samples.size(), 2u);
    EXPECT_NEAR(buf.samples[0], 32767.0 / 32768.0, 1e-12);
    EXPECT_DOUBLE_EQ(buf.samples[1], -1.0);
}

TEST(Wav, OpposingStereoChannelsCancel) {
    const auto dir = test::test_dir("wav_stereo");
    ByteWriter w;
    const int n = 100;
    w.magic("RIFF");
    w.u32(36 + 4 * n);
    w.magic("WAVE");
    w.magic("fmt ");
    w.u32(16);
    w.u16(1);
    w.u16(2);
    w.u32(24000);
    w.u32(96000);
    w.u16(4);
    w.u16(16);
    w.magic("data");
    w.u32(4 * n);
    Rng rng(5);
    for (int i = 0; i < n; ++i) {
        const auto v = static_cast<std::int16_t>(rng.below(32768));
        w.u16(static_cast<std::uint16_t>(v));
        w.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(-v)));
    }
    w.save(dir / "st.wav");
    AudioBuffer buf = load_wav(dir / "st.wav");
    ASSERT_EQ(buf.samples.size(), static_cast<std::size_t>(n));
    for (double s : buf.samples) ASSERT_EQ(s, 0.0);
}

TEST(Wav, MalformedHeaderReportsOffset) {
    const auto dir = test::test_dir("wav_bad");
    std::ofstream f(dir / "bad.wav", std::ios::binary);
    f << "RIFX0000WAVE";
    f.close();
    try {
        load_wav(dir / "bad.wav");
        FAIL() << "expected parse_error";
    } catch (const parse_error& e) {
        EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos) << e.what();
    }
}

TEST(Wav, Float32Payload) {
    const auto dir = test::test_dir("wav_f32");
    ByteWriter w;
    w.magic("RIFF");
    w.u32(36 + 8);
    w.magic("WAVE");
    w.magic("fmt ");
    w.u32(16);
    w.u16(3);
    w.u16(1);
    w.u32(48000);
    w.u32(192000);
    w.u16(4);
    w.u16(32);
    w.magic("data");
    w.u32(8);
    w.f32(0.5f);
    w.f32(-0.25f);
    w.save(dir / "f.wav");
    AudioBuffer buf = load_wav(dir / "f.wav");
    EXPECT_EQ(buf.sample_rate, 48000);
    ASSERT_EQ(buf.samples.size(), 2u);
    EXPECT_DOUBLE_EQ(buf.samples[0], 0.5);
    EXPECT_DOUBLE_EQ(buf.samples[1], -0.25);
}

TEST(Resample, EqualRatesPassThroughBitIdentical) {
    AudioBuffer buf = sine(440.0, 24000, 0.1);
    AudioBuffer out = resample(buf, 24000);
    ASSERT_EQ(out.samples.size(), buf.samples.size());
    for (std::size_t i = 0; i < buf.samples.size(); ++i) ASSERT_EQ(out.samples[i], buf.samples[i]);
}

TEST(Resample, LengthContract) {
    AudioBuffer buf;
    buf.sample_rate = 48000;
    buf.samples.assign(48000, 0.0);
    EXPECT_EQ(resample(buf, 24000).samples.size(), 24000u);

    buf.samples.assign(44100, 0.0);
    buf.sample_rate = 44100;
    EXPECT_EQ(resample(buf, 24000).samples.size(), 24000u);
}

TEST(Resample, SineSurvivesDownsampling) {
    AudioBuffer src = sine(1000.0, 48000, 0.5, 0.8);
    AudioBuffer out = resample(src, 24000);
    // Correlate interior samples against the analytic sine at the output rate.
    const std::size_t skip = 128;
    double num = 0.0, den_a = 0.0, den_b = 0.0;
    for (std::size_t i = skip; i + skip < out.samples.size(); ++i) {
        const double ideal = 0.8 * std::sin(2.0 * M_PI * 1000.0 * static_cast<double>(i) / 24000.0);
        num += out.samples[i] * ideal;
        den_a += out.samples[i] * out.samples[i];
        den_b += ideal * ideal;
    }
    const double corr = num / std::sqrt(den_a * den_b);
    EXPECT_GE(corr, 0.999);
}

TEST(Resample, RejectsSub8kSource) {
    AudioBuffer buf;
    buf.sample_rate = 4000;
    buf.samples.assign(4000, 0.0);
    EXPECT_THROW(resample(buf, 24000), contract_error);
}

TEST(Mel, TenSecondsIsExactly750Frames) {
    AudioBuffer buf;
    buf.sample_rate = 24000;
    buf.samples.assign(240000, 0.0);
    MelFrameSequence seq = causal_log_mel(buf);
    EXPECT_EQ(seq.n_frames(), 750);
    EXPECT_EQ(seq.frames.cols(), 64);
    EXPECT_EQ(seq.frame_rate, 75);
}

TEST(Mel, FrameCountIsFloorOfHops) {
    for (std::int64_t n : {320, 321, 639, 640, 960, 24000, 24319}) {
        AudioBuffer buf;
        buf.sample_rate = 24000;
        buf.samples.assign(static_cast<std::size_t>(n), 0.01);
        EXPECT_EQ(causal_log_mel(buf).n_frames(), n / 320) << n;
    }
}

TEST(Mel, SilenceHitsLogFloor) {
    AudioBuffer buf;
    buf.sample_rate = 24000;
    buf.samples.assign(3200, 0.0);
    MelFrameSequence seq = causal_log_mel(buf);
    for (std::int64_t i = 0; i < seq.frames.numel(); ++i)
        ASSERT_DOUBLE_EQ(seq.frames[i], std::log(1e-10));
}

TEST(Mel, WrongSampleRateRejected) {
    AudioBuffer buf;
    buf.sample_rate = 16000;
    buf.samples.assign(16000, 0.0);
    EXPECT_THROW(causal_log_mel(buf), contract_error);
}

// Oracle: the hottest mel bin for a 440 Hz tone must be the filter whose
// center frequency is nearest 440 Hz.
TEST(Mel, PureToneLandsOnNearestFilter) {
    const auto centers = mel_filter_centers_hz();
    int expected = 0;
    for (int b = 1; b < 64; ++b)
        if (std::abs(centers[b] - 440.0) < std::abs(centers[expected] - 440.0)) expected = b;

    MelFrameSequence seq = causal_log_mel(sine(440.0, 24000, 1.0));
    for (std::int64_t t = 3; t < seq.n_frames(); ++t) { // skip attack frames
        int argmax = 0;
        for (int b = 1; b < 64; ++b)
            if (seq.frames.at(t, b) > seq.frames.at(t, argmax)) argmax = b;
        ASSERT_EQ(argmax, expected) << "frame " << t;
    }
}

// Key causality probe: changing any sample strictly after t*320 must leave
// frames 1..t bit-identical.
TEST(Mel, CausalFramesIgnoreFutureSamples) {
    Rng rng(21);
    AudioBuffer buf;
    buf.sample_rate = 24000;
    buf.samples.resize(3200);
    for (auto& s : buf.samples) s = rng.uniform(-0.9, 0.9);
    MelFrameSequence base = causal_log_mel(buf);

    for (std::int64_t t : {1, 3, 7, 9}) {
        AudioBuffer mod = buf;
        for (std::size_t i = static_cast<std::size_t>(t * 320); i < mod.samples.size(); ++i)
            mod.samples[i] = rng.uniform(-0.9, 0.9);
        MelFrameSequence perturbed = causal_log_mel(mod);
        for (std::int64_t f = 0; f < t; ++f)
            for (int b = 0; b < 64; ++b)
                ASSERT_EQ(perturbed.frames.at(f, b), base.frames.at(f, b))
                    << "frame " << f << " bin " << b << " after editing samples > " << t * 320;
        bool some_later_changed = false;
        for (std::int64_t f = t; f < base.n_frames() && !some_later_changed; ++f)
            for (int b = 0; b < 64; ++b)
                if (perturbed.frames.at(f, b) != base.frames.at(f, b)) {
                    some_later_changed = true;
                    break;
                }
        EXPECT_TRUE(some_later_changed);
    }
}

TEST(Stats, DegenerateCorpusClampsStd) {
    MelFrameSequence seq;
    seq.frames = Tensor::full({5, 64}, 3.0);
    NormalizationStats stats = fit_normalization({&seq}, "deg");
    for (int b = 0; b < 64; ++b) {
        EXPECT_DOUBLE_EQ(stats.mean[b], 3.0);
        EXPECT_DOUBLE_EQ(stats.stddev[b], 1e-5);
    }
}

TEST(Stats, TwoFrameHandValues) {
    MelFrameSequence seq;
    seq.frames = Tensor({2, 64});
    for (int b = 0; b < 64; ++b) seq.frames.at(1, b) = 2.0;
    NormalizationStats stats = fit_normalization({&seq}, "two");
    for (int b = 0; b < 64; ++b) {
        EXPECT_NEAR(stats.mean[b], 1.0, 1e-12);
        EXPECT_NEAR(stats.stddev[b], 1.0, 1e-12);
    }
}

TEST(Stats, FitApplyRefitIsStandard) {
    Rng rng(31);
    std::vector<MelFrameSequence> corpus(4);
    for (auto& seq : corpus) {
        seq.frames = Tensor({50, 64});
        for (std::int64_t i = 0; i < seq.frames.numel(); ++i)
            seq.frames[i] = rng.normal(-3.0, 2.5);
    }
    std::vector<const MelFrameSequence*> ptrs;
    for (auto& s : corpus) ptrs.push_back(&s);
    NormalizationStats stats = fit_normalization(ptrs, "rand");

    std::vector<MelFrameSequence> normed;
    std::vector<const MelFrameSequence*> nptrs;
    for (auto& s : corpus) {
        MelFrameSequence n = apply_normalization(s, stats);
        n.stats_id = "raw"; // re-fit measures the frame statistics themselves
        normed.push_back(std::move(n));
    }
    for (auto& s : normed) nptrs.push_back(&s);
    NormalizationStats refit = fit_normalization(nptrs, "refit");
    for (int b = 0; b < 64; ++b) {
        EXPECT_NEAR(refit.mean[b], 0.0, 1e-6);
        EXPECT_NEAR(refit.stddev[b], 1.0, 1e-6);
    }
}

TEST(Stats, EmptyCorpusRejected) {
    EXPECT_THROW(fit_normalization({}, "none"), contract_error);
}

TEST(Stats, DoubleNormalizationRejected) {
    MelFrameSequence seq;
    seq.frames = Tensor({3, 64});
    for (std::int64_t i = 0; i < seq.frames.numel(); ++i) seq.frames[i] = static_cast<double>(i % 7);
    NormalizationStats stats = fit_normalization({&seq}, "c");
    MelFrameSequence once = apply_normalization(seq, stats);
    EXPECT_THROW(apply_normalization(once, stats), contract_error);
}

TEST(Stats, IdentityStatsLeaveFramesUnchanged) {
    MelFrameSequence seq;
    seq.frames = Tensor({3, 64});
    Rng rng(41);
    for (std::int64_t i = 0; i < seq.frames.numel(); ++i) seq.frames[i] = rng.uniform(-2, 2);
    NormalizationStats ident;
    ident.mean.assign(64, 0.0);
    ident.stddev.assign(64, 1.0);
    ident.corpus_id = "identity";
    MelFrameSequence out = apply_normalization(seq, ident);
    for (std::int64_t i = 0; i < seq.frames.numel(); ++i)
        ASSERT_EQ(out.frames[i], seq.frames[i]);
}

TEST(MelFiles, RoundTrip) {
    const auto dir = test::test_dir("mel_files");
    Rng rng(51);
    MelFrameSequence seq;
    seq.frames = Tensor({20, 64});
    for (std::int64_t i = 0; i < seq.frames.numel(); ++i)
        seq.frames[i] = static_cast<float>(rng.uniform(-8, 2)); // f32-representable
    save_mel(dir / "a.wgm1", seq);
    MelFrameSequence back = load_mel(dir / "a.wgm1");
    EXPECT_EQ(back.n_frames(), 20);
    EXPECT_TRUE(back.raw());
    for (std::int64_t i = 0; i < seq.frames.numel(); ++i) ASSERT_EQ(back.frames[i], seq.frames[i]);

    seq.stats_id = "norm";
    save_mel(dir / "b.wgm1", seq);
    EXPECT_FALSE(load_mel(dir / "b.wgm1").raw());
}

TEST(MelFiles, StatsRoundTrip) {
    const auto dir = test::test_dir("stats_files");
    NormalizationStats stats;
    Rng rng(61);
    for (int b = 0; b < 64; ++b) {
        stats.mean.push_back(rng.uniform(-5, 5));
        stats.stddev.push_back(rng.uniform(0.1, 3.0));
    }
    stats.corpus_id = "corpus-xyz";
    save_stats(dir / "s.wgs1", stats);
    NormalizationStats back = load_stats(dir / "s.wgs1");
    EXPECT_EQ(back.corpus_id, "corpus-xyz");
    for (int b = 0; b < 64; ++b) {
        ASSERT_EQ(back.mean[b], stats.mean[b]);
        ASSERT_EQ(back.stddev[b], stats.stddev[b]);
    }
}

TEST(MelFiles, BadMagicReportsOffset) {
    const auto dir = test::test_dir("mel_bad");
    std::ofstream f(dir / "bad.wgm1", std::ios::binary);
    f << "NOPE";
    f.close();
    EXPECT_THROW(load_mel(dir / "bad.wgm1"), parse_error);
}
