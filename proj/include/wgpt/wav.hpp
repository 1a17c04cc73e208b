#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "wgpt/io.hpp"

namespace wgpt {

// Mono PCM audio in [-1, 1] at a known sample rate.
struct AudioBuffer {
    std::vector<double> samples;
    int sample_rate = 0;

    double duration_s() const {
        return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
};

// Reads a RIFF/WAVE file: PCM 16-bit (format 1) or IEEE float 32-bit
// (format 3), 1 or 2 channels. Stereo is downmixed by averaging; int16
// samples are scaled by 1/32768.
inline AudioBuffer load_wav(const std::filesystem::path& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("RIFF");
    r.u32(); // riff size; chunk walk below is bounded by the buffer instead
    r.expect_magic("WAVE");

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    std::vector<double> mono;

    while (r.remaining() >= 8) {
        char id[5] = {};
        r.raw(id, 4);
        const std::uint32_t size = r.u32();
        if (std::string_view(id, 4) == "fmt ") {
            if (size < 16) r.err("fmt chunk too short");
            const std::size_t chunk_end = r.pos() + size;
            format = r.u16();
            channels = r.u16();
            rate = r.u32();
            r.u32(); // byte rate
            r.u16(); // block align
            bits = r.u16();
            if (r.pos() > chunk_end) r.err("fmt chunk overruns file");
            while (r.pos() < chunk_end) r.u16();
            have_fmt = true;
        } else if (std::string_view(id, 4) == "data") {
            if (!have_fmt) r.err("data chunk before fmt chunk");
            if (channels < 1 || channels > 2)
                fail_parse(path.string(), ": unsupported channel count ", channels,
                           " at byte offset ", r.pos());
            const bool pcm16 = format == 1 && bits == 16;
            const bool f32 = format == 3 && bits == 32;
            if (!pcm16 && !f32)
                fail_parse(path.string(), ": unsupported codec (format ", format, ", ", bits,
                           " bits) at byte offset ", r.pos());
            const std::size_t bytes_per = (pcm16 ? 2u : 4u) * channels;
            if (size > r.remaining()) r.err("data chunk truncated");
            const std::size_t n = size / bytes_per;
            mono.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (int c = 0; c < channels; ++c) {
                    if (pcm16) {
                        const auto s = static_cast<std::int16_t>(r.u16());
                        acc += static_cast<double>(s) / 32768.0;
                    } else {
                        acc += static_cast<double>(r.f32());
                    }
                }
                mono[i] = acc / channels;
            }
            if (size % 2 == 1 && r.remaining() > 0) r.raw(id, 1); // chunk padding
            return AudioBuffer{std::move(mono), static_cast<int>(rate)};
        } else {
            const std::size_t skip = size + (size % 2);
            if (skip > r.remaining()) r.err("chunk overruns file");
            std::vector<char> scratch(skip);
            r.raw(scratch.data(), skip);
        }
    }
    r.err("no data chunk found");
}

// Writes 16-bit PCM mono. Samples are clamped to [-1, 1] and rounded.
inline void save_wav(const std::filesystem::path& path, const AudioBuffer& buf) {
    ByteWriter w;
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(buf.samples.size() * 2);
    w.magic("RIFF");
    w.u32(36 + data_bytes);
    w.magic("WAVE");
    w.magic("fmt ");
    w.u32(16);
    w.u16(1); // PCM
    w.u16(1); // mono
    w.u32(static_cast<std::uint32_t>(buf.sample_rate));
    w.u32(static_cast<std::uint32_t>(buf.sample_rate) * 2);
    w.u16(2);
    w.u16(16);
    w.magic("data");
    w.u32(data_bytes);
    for (double s : buf.samples) {
        const double c = std::clamp(s, -1.0, 1.0);
        const auto q = static_cast<std::int16_t>(std::lround(c * 32767.0));
        w.u16(static_cast<std::uint16_t>(q));
    }
    w.save(path);
}

} // namespace wgpt
