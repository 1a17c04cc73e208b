#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "wgpt/mel.hpp"
#include "wgpt/tokens.hpp"

namespace wgpt {

// One line of the dataset manifest: utterance_id <TAB> tokens_path
// [<TAB> mel_path]. Paths are resolved relative to the manifest's directory.
struct ManifestEntry {
    std::string utterance_id;
    std::filesystem::path tokens_path;
    std::filesystem::path mel_path; // empty for token-only datasets
};

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) fail_parse("cannot open manifest: ", path.string());
    const auto base = path.parent_path();
    std::vector<ManifestEntry> entries;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        ManifestEntry e;
        const auto tab1 = line.find('\t');
        if (tab1 == std::string::npos)
            fail_parse(path.string(), ":", lineno, ": expected utterance_id<TAB>tokens_path");
        e.utterance_id = line.substr(0, tab1);
        const auto tab2 = line.find('\t', tab1 + 1);
        if (tab2 == std::string::npos) {
            e.tokens_path = base / line.substr(tab1 + 1);
        } else {
            e.tokens_path = base / line.substr(tab1 + 1, tab2 - tab1 - 1);
            const std::string mel = line.substr(tab2 + 1);
            if (!mel.empty()) e.mel_path = base / mel;
        }
        if (e.utterance_id.empty())
            fail_parse(path.string(), ":", lineno, ": empty utterance id");
        if (!seen.insert(e.utterance_id).second)
            fail_parse(path.string(), ":", lineno, ": duplicate utterance id '", e.utterance_id, "'");
        entries.push_back(std::move(e));
    }
    return entries;
}

inline void save_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) fail_parse("cannot write manifest: ", path.string());
    const auto base = path.parent_path();
    for (const auto& e : entries) {
        f << e.utterance_id << '\t' << std::filesystem::relative(e.tokens_path, base).string();
        if (!e.mel_path.empty()) f << '\t' << std::filesystem::relative(e.mel_path, base).string();
        f << '\n';
    }
}

// 5% of utterances go to validation, selected by a seed-independent hash of
// the utterance id so every model variant sees the identical split.
inline bool is_validation_utterance(const std::string& utterance_id) {
    return fnv1a64(utterance_id) % 100 < 5;
}

struct Example {
    std::string id;
    TokenSequence tokens;
    std::optional<MelFrameSequence> frames; // aligned to tokens when present
};

struct Dataset {
    std::vector<Example> train;
    std::vector<Example> val;

    std::size_t size() const { return train.size() + val.size(); }
};

// Loads every manifest entry, aligning mel frames to tokens where present and
// applying normalization stats to raw frames when provided.
inline Dataset load_dataset(const std::filesystem::path& manifest_path,
                            const NormalizationStats* stats, bool need_mel) {
    Dataset ds;
    for (const auto& entry : load_manifest(manifest_path)) {
        Example ex;
        ex.id = entry.utterance_id;
        ex.tokens = load_tokens(entry.tokens_path);
        if (!entry.mel_path.empty()) {
            MelFrameSequence frames = load_mel(entry.mel_path);
            if (frames.raw() && stats) frames = apply_normalization(frames, *stats);
            AlignedExample aligned = align(std::move(ex.tokens), std::move(frames), ex.id);
            ex.tokens = std::move(aligned.tokens);
            ex.frames = std::move(aligned.frames);
        } else if (need_mel) {
            fail_config("dataset: utterance '", ex.id, "' has no mel path but the model needs frames");
        }
        (is_validation_utterance(ex.id) ? ds.val : ds.train).push_back(std::move(ex));
    }
    return ds;
}

} // namespace wgpt
