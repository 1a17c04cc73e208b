#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wgpt/dataset.hpp"
#include "wgpt/mel.hpp"
#include "wgpt/rng.hpp"
#include "wgpt/tokens.hpp"

namespace wgpt {

// Synthetic corpora for self-contained training runs.
//
// "hybrid-advantage": each sequence follows a hidden continuous phase c in
// [0, V) cell units, advancing by a per-sequence drift plus per-step jitter.
// The mel frame at step t is a circular spectral bump centered at c_t, so the
// frame reveals the phase exactly; the token is floor(c_t) — a coarse
// quantization of the very same bump. Predicting the next token therefore
// needs the position *within* the current cell, which the token stream has
// destroyed but the slice stream still carries.
//
// "memorize": uniform random token sequences, no frames.

struct SynthSpec {
    std::string profile; // "hybrid-advantage" or "memorize"
    int n = 200;
    int len = 256;
    int vocab = 64;
    std::uint64_t seed = 1;
};

namespace detail {

inline void bump_frame(double* out, double center_bin, double sigma) {
    for (int b = 0; b < melspec::kBins; ++b) {
        const double lin = std::abs(static_cast<double>(b) - center_bin);
        const double dist = std::min(lin, static_cast<double>(melspec::kBins) - lin);
        out[b] = std::exp(-dist * dist / (2.0 * sigma * sigma));
    }
}

} // namespace detail

// Generates the corpus under out_dir: tokens/*.wgt1 (+ mels/*.wgm1 with a
// stats.wgs1 for the hybrid-advantage profile) and a manifest.tsv.
// Deterministic given the spec.
inline std::filesystem::path synthesize_corpus(const std::filesystem::path& out_dir,
                                               const SynthSpec& spec) {
    if (spec.profile != "hybrid-advantage" && spec.profile != "memorize")
        fail_config("synth: unknown profile '", spec.profile, "'");
    if (spec.n < 1 || spec.len < 2 || spec.vocab < 2)
        fail_config("synth: need n >= 1, len >= 2, vocab >= 2");
    const bool with_mel = spec.profile == "hybrid-advantage";

    std::filesystem::create_directories(out_dir / "tokens");
    if (with_mel) std::filesystem::create_directories(out_dir / "mels");

    const Rng root = Rng(spec.seed).child(spec.profile);
    std::vector<ManifestEntry> manifest;
    std::vector<TokenSequence> all_tokens(static_cast<std::size_t>(spec.n));
    std::vector<MelFrameSequence> all_mels;
    if (with_mel) all_mels.resize(static_cast<std::size_t>(spec.n));

    for (int i = 0; i < spec.n; ++i) {
        Rng rng = root.child("seq", static_cast<std::uint64_t>(i));
        TokenSequence& toks = all_tokens[static_cast<std::size_t>(i)];
        toks.vocab = spec.vocab;
        toks.ids.resize(static_cast<std::size_t>(spec.len));
        if (with_mel) {
            MelFrameSequence& mel = all_mels[static_cast<std::size_t>(i)];
            mel.frames = Tensor({spec.len, melspec::kBins});
            const double V = static_cast<double>(spec.vocab);
            const double bins_per_cell = static_cast<double>(melspec::kBins) / V;
            double c = rng.uniform(0.0, V);
            const double drift = rng.uniform(0.9, 2.1); // cells per step
            for (int t = 0; t < spec.len; ++t) {
                const int tok = std::min(static_cast<int>(c), spec.vocab - 1);
                toks.ids[static_cast<std::size_t>(t)] = tok;
                detail::bump_frame(mel.frames.data() + static_cast<std::int64_t>(t) * melspec::kBins,
                                   c * bins_per_cell, 1.5);
                c = std::fmod(c + drift + rng.uniform(-0.3, 0.3) + V, V);
            }
        } else {
            for (int t = 0; t < spec.len; ++t)
                toks.ids[static_cast<std::size_t>(t)] =
                    static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.vocab)));
        }
    }

    NormalizationStats stats;
    if (with_mel) {
        std::vector<const MelFrameSequence*> ptrs;
        for (const auto& m : all_mels) ptrs.push_back(&m);
        stats = fit_normalization(ptrs, spec.profile + "-seed" + std::to_string(spec.seed));
        save_stats(out_dir / "stats.wgs1", stats);
    }

    char name[64];
    for (int i = 0; i < spec.n; ++i) {
        std::snprintf(name, sizeof(name), "%s-%04d", spec.profile.c_str(), i);
        ManifestEntry entry;
        entry.utterance_id = name;
        entry.tokens_path = out_dir / "tokens" / (std::string(name) + ".wgt1");
        save_tokens(entry.tokens_path, all_tokens[static_cast<std::size_t>(i)]);
        if (with_mel) {
            entry.mel_path = out_dir / "mels" / (std::string(name) + ".wgm1");
            save_mel(entry.mel_path, apply_normalization(all_mels[static_cast<std::size_t>(i)], stats));
        }
        manifest.push_back(std::move(entry));
    }
    const auto manifest_path = out_dir / "manifest.tsv";
    save_manifest(manifest_path, manifest);
    return manifest_path;
}

} // namespace wgpt
