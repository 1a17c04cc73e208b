#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "wgpt/model.hpp"
#include "wgpt/rng.hpp"
#include "wgpt/tokens.hpp"

namespace wgpt {

struct SamplerConfig {
    double temperature = 1.0;
    int top_k = kDefaultVocab;
    int max_new_tokens = 64;
    std::uint64_t seed = 1;

    void validate(int vocab) const {
        if (!(temperature > 0.0)) fail_config("sampler: temperature must be > 0");
        if (top_k < 1 || top_k > vocab)
            fail_config("sampler: top_k must be in [1,", vocab, "], got ", top_k);
        if (max_new_tokens < 0) fail_config("sampler: max_new_tokens must be >= 0");
    }
};

namespace detail {

// Temperature-scaled, top-k-truncated categorical draw from one logits row.
// Candidates are ordered by (logit desc, id asc), so ties and the draw itself
// are deterministic for a given stream.
inline int sample_from_logits(const double* logits, int vocab, const SamplerConfig& sc, Rng& rng) {
    std::vector<int> ids(static_cast<std::size_t>(vocab));
    for (int i = 0; i < vocab; ++i) ids[static_cast<std::size_t>(i)] = i;
    const int k = std::min(sc.top_k, vocab);
    std::partial_sort(ids.begin(), ids.begin() + k, ids.end(), [&](int a, int b) {
        if (logits[a] != logits[b]) return logits[a] > logits[b];
        return a < b;
    });
    std::vector<double> probs(static_cast<std::size_t>(k));
    const double mx = logits[ids[0]] / sc.temperature;
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
        const double p = std::exp(logits[ids[static_cast<std::size_t>(i)]] / sc.temperature - mx);
        probs[static_cast<std::size_t>(i)] = p;
        sum += p;
    }
    const double u = rng.uniform() * sum;
    double acc = 0.0;
    for (int i = 0; i < k; ++i) {
        acc += probs[static_cast<std::size_t>(i)];
        if (acc >= u) return ids[static_cast<std::size_t>(i)];
    }
    return ids[static_cast<std::size_t>(k - 1)];
}

} // namespace detail

// Autoregressive decoding for the token-only variants: append draws from the
// temperature/top-k distribution of the last position until max_new_tokens or
// the context limit. The hybrid has no free-running mode: producing token t+1
// would need the mel slice of audio that does not exist yet, and no
// token-to-audio decoder is in scope; use teacher-forced or ground-truth-audio
// continuation scoring instead.
inline TokenSequence sample(const ModelConfig& cfg, ParameterSet& params, const TokenSequence& prompt,
                            const SamplerConfig& sc) {
    if (cfg.is_hybrid())
        fail_contract(
            "sample: free-running generation is unsupported for the hybrid variant; "
            "token t+1 would require the spectrogram slice of not-yet-generated audio. "
            "Use teacher-forced evaluation or hybrid_continuation_eval.");
    sc.validate(cfg.vocab);
    if (prompt.size() < 1) fail_contract("sample: prompt must hold at least 1 token");
    if (prompt.vocab != cfg.vocab)
        fail_contract("sample: prompt vocab ", prompt.vocab, " != model vocab ", cfg.vocab);

    TokenSequence out = prompt;
    Rng rng = Rng(sc.seed).child("sample");
    for (int produced = 0; produced < sc.max_new_tokens && out.size() < cfg.context; ++produced) {
        const Tensor logits = forward_gpt(cfg, params, out.ids);
        const double* last = logits.data() + (logits.rows() - 1) * logits.cols();
        out.ids.push_back(detail::sample_from_logits(last, cfg.vocab, sc, rng));
    }
    return out;
}

} // namespace wgpt
