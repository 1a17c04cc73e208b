#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wgpt/io.hpp"
#include "wgpt/mel.hpp"

namespace wgpt {

constexpr int kDefaultVocab = 1024;
constexpr int kTokenRate = 75;

// Coarse acoustic token ids at 75 Hz.
struct TokenSequence {
    enum class Source { external, vq };

    std::vector<int> ids;
    int vocab = kDefaultVocab;
    int rate = kTokenRate;
    Source source = Source::external;

    std::int64_t size() const { return static_cast<std::int64_t>(ids.size()); }

    void validate() const {
        if (ids.empty()) fail_contract("TokenSequence: empty");
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (ids[i] < 0 || ids[i] >= vocab)
                fail_contract("TokenSequence: id ", ids[i], " at position ", i,
                              " outside vocabulary [0,", vocab, ")");
    }
};

// A token stream and its mel frames, one frame per token.
struct AlignedExample {
    TokenSequence tokens;
    MelFrameSequence frames;
    std::string utterance_id;

    std::int64_t size() const { return tokens.size(); }
};

// Tolerates up to 2 frames/tokens of edge mismatch by truncating both to the
// shorter length; larger gaps are misalignments.
inline AlignedExample align(TokenSequence tokens, MelFrameSequence frames, std::string utterance_id) {
    const std::int64_t nt = tokens.size();
    const std::int64_t nf = frames.n_frames();
    if (std::abs(nt - nf) > 2)
        fail_contract("align: ", nt, " tokens vs ", nf, " frames for '", utterance_id,
                      "' differ by more than 2");
    const std::int64_t n = std::min(nt, nf);
    tokens.ids.resize(static_cast<std::size_t>(n));
    if (frames.n_frames() != n) {
        Tensor cut({n, melspec::kBins});
        std::copy(frames.frames.data(), frames.frames.data() + n * melspec::kBins, cut.data());
        frames.frames = std::move(cut);
    }
    return AlignedExample{std::move(tokens), std::move(frames), std::move(utterance_id)};
}

// ---- WGT1 file format ----

inline void save_tokens(const std::filesystem::path& path, const TokenSequence& seq) {
    seq.validate();
    if (seq.vocab > 65536) fail_contract("save_tokens: vocab ", seq.vocab, " exceeds u16 ids");
    ByteWriter w;
    w.magic("WGT1");
    w.u32(static_cast<std::uint32_t>(seq.vocab));
    w.u32(static_cast<std::uint32_t>(seq.ids.size()));
    for (int id : seq.ids) w.u16(static_cast<std::uint16_t>(id));
    w.save(path);
}

inline TokenSequence load_tokens(const std::filesystem::path& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("WGT1");
    TokenSequence seq;
    seq.vocab = static_cast<int>(r.u32());
    if (seq.vocab <= 0 || seq.vocab > 65536) r.err("bad vocabulary size " + std::to_string(seq.vocab));
    const std::uint32_t n = r.u32();
    if (n == 0) r.err("empty token sequence");
    seq.ids.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint16_t id = r.u16();
        if (id >= seq.vocab)
            fail_parse(path.string(), ": token id ", id, " violates vocabulary ", seq.vocab,
                       " at byte offset ", r.pos() - 2);
        seq.ids[i] = id;
    }
    seq.source = TokenSequence::Source::external;
    return seq;
}

} // namespace wgpt
