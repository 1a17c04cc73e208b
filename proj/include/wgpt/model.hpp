#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wgpt/graph.hpp"
#include "wgpt/mel.hpp"
#include "wgpt/tokens.hpp"

namespace wgpt {

enum class Variant { gpt_s, gpt_l, hybrid };

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::gpt_s: return "gpt_s";
        case Variant::gpt_l: return "gpt_l";
        case Variant::hybrid: return "hybrid";
    }
    fail_config("unknown variant");
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "gpt_s") return Variant::gpt_s;
    if (s == "gpt_l") return Variant::gpt_l;
    if (s == "hybrid") return Variant::hybrid;
    fail_config("unknown model variant '", s, "' (expected gpt_s, gpt_l or hybrid)");
}

// Architecture hyperparameters. Presets carry the reference dimensions; tests
// shrink them through the same fields.
struct ModelConfig {
    Variant variant = Variant::gpt_s;
    int vocab = kDefaultVocab;
    int context = 750;
    int main_layers = 8;
    int main_dim = 64;
    int main_heads = 8;
    int ff_mult = 4;
    int head_hidden = 2048;
    int token_embed_dim = 64;
    // Hybrid-only fields; zero for token-only variants.
    int whisper_layers = 0;
    int whisper_dim = 0;
    int whisper_heads = 0;
    int slice_proj_hidden = 0;
    int n_mel_bins = 0;
    int spec_shift = 0;

    static ModelConfig preset_gpt_s() {
        ModelConfig c;
        c.variant = Variant::gpt_s;
        c.main_layers = 8;
        c.main_dim = 64;
        c.main_heads = 8;
        c.token_embed_dim = 64;
        return c;
    }

    static ModelConfig preset_gpt_l() {
        ModelConfig c;
        c.variant = Variant::gpt_l;
        c.main_layers = 8;
        c.main_dim = 256;
        c.main_heads = 16;
        c.token_embed_dim = 256;
        return c;
    }

    static ModelConfig preset_hybrid() {
        ModelConfig c;
        c.variant = Variant::hybrid;
        c.main_layers = 8;
        c.main_dim = 64;
        c.main_heads = 8;
        c.token_embed_dim = 32;
        c.whisper_layers = 6;
        c.whisper_dim = 32;
        c.whisper_heads = 4;
        c.slice_proj_hidden = 2048;
        c.n_mel_bins = melspec::kBins;
        c.spec_shift = 2;
        return c;
    }

    static ModelConfig preset(Variant v) {
        switch (v) {
            case Variant::gpt_s: return preset_gpt_s();
            case Variant::gpt_l: return preset_gpt_l();
            case Variant::hybrid: return preset_hybrid();
        }
        fail_config("unknown variant");
    }

    bool is_hybrid() const { return variant == Variant::hybrid; }

    void validate() const {
        if (vocab < 2) fail_config("model: vocab must be >= 2, got ", vocab);
        if (context < 2) fail_config("model: context must be >= 2, got ", context);
        if (main_layers < 1 || main_dim < 1 || main_heads < 1 || ff_mult < 1 || head_hidden < 1)
            fail_config("model: main stack dimensions must be positive");
        if (main_dim % main_heads != 0)
            fail_config("model: main_dim ", main_dim, " not divisible by main_heads ", main_heads);
        if (is_hybrid()) {
            if (whisper_layers < 1 || whisper_dim < 1 || whisper_heads < 1 || slice_proj_hidden < 1)
                fail_config("model: hybrid whisper-branch dimensions must be positive");
            if (whisper_dim % whisper_heads != 0)
                fail_config("model: whisper_dim ", whisper_dim, " not divisible by whisper_heads ",
                            whisper_heads);
            if (token_embed_dim + whisper_dim != main_dim)
                fail_config("model: token_embed_dim ", token_embed_dim, " + whisper_dim ", whisper_dim,
                            " must equal main_dim ", main_dim);
            if (n_mel_bins != melspec::kBins)
                fail_config("model: hybrid needs n_mel_bins == ", melspec::kBins);
            if (spec_shift != 2)
                fail_config("model: only spec_shift == 2 is supported, got ", spec_shift);
        } else {
            if (token_embed_dim != main_dim)
                fail_config("model: token-only variants need token_embed_dim == main_dim");
            if (whisper_layers != 0 || whisper_dim != 0 || whisper_heads != 0 ||
                slice_proj_hidden != 0 || n_mel_bins != 0 || spec_shift != 0)
                fail_config("model: whisper-branch fields must be zero for token-only variants");
        }
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"variant", variant_name(variant)},
                              {"vocab", vocab},
                              {"context", context},
                              {"main_layers", main_layers},
                              {"main_dim", main_dim},
                              {"main_heads", main_heads},
                              {"ff_mult", ff_mult},
                              {"head_hidden", head_hidden},
                              {"token_embed_dim", token_embed_dim},
                              {"whisper_layers", whisper_layers},
                              {"whisper_dim", whisper_dim},
                              {"whisper_heads", whisper_heads},
                              {"slice_proj_hidden", slice_proj_hidden},
                              {"n_mel_bins", n_mel_bins},
                              {"spec_shift", spec_shift}};
    }

    static ModelConfig from_json(const nlohmann::json& j);

    bool operator==(const ModelConfig&) const = default;
};

// Standard sinusoidal position encoding: pe[t, 2i] = sin(t / 10000^(2i/d)),
// pe[t, 2i+1] = cos(same), t zero-based.
inline Tensor sinusoidal_pe(std::int64_t T, std::int64_t d) {
    if (T < 1) fail_contract("sinusoidal_pe: T must be positive, got ", T);
    if (d < 2 || d % 2 != 0) fail_contract("sinusoidal_pe: dim must be even and >= 2, got ", d);
    Tensor pe({T, d});
    for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t i = 0; i < d / 2; ++i) {
            const double rate = std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
            const double arg = static_cast<double>(t) / rate;
            pe.at(t, 2 * i) = std::sin(arg);
            pe.at(t, 2 * i + 1) = std::cos(arg);
        }
    return pe;
}

namespace detail {

inline void add_block_params(ParameterSet& ps, const std::string& prefix, int d, int ff_mult,
                             Rng* rng) {
    auto weight = [&](const std::string& name, std::int64_t r, std::int64_t c) {
        Tensor t({r, c});
        if (rng) {
            Rng stream = rng->child(name);
            for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = stream.normal(0.0, 0.02);
        }
        ps.add(name, std::move(t));
    };
    auto vec = [&](const std::string& name, std::int64_t n, double v) {
        ps.add(name, Tensor::full({n}, v));
    };
    vec(prefix + ".ln1.g", d, 1.0);
    vec(prefix + ".ln1.b", d, 0.0);
    for (const char* nm : {"wq", "wk", "wv", "wo"}) weight(prefix + ".attn." + nm, d, d);
    for (const char* nm : {"bq", "bk", "bv", "bo"}) vec(prefix + ".attn." + nm, d, 0.0);
    vec(prefix + ".ln2.g", d, 1.0);
    vec(prefix + ".ln2.b", d, 0.0);
    weight(prefix + ".ff.w1", d, static_cast<std::int64_t>(d) * ff_mult);
    vec(prefix + ".ff.b1", static_cast<std::int64_t>(d) * ff_mult, 0.0);
    weight(prefix + ".ff.w2", static_cast<std::int64_t>(d) * ff_mult, d);
    vec(prefix + ".ff.b2", d, 0.0);
}

} // namespace detail

// Builds the full named parameter set for a config. With rng == nullptr all
// weights are zero (used for exact parameter accounting); otherwise weights
// are N(0, 0.02) per-tensor streams, biases zero, norm gains one.
inline ParameterSet make_parameters(const ModelConfig& cfg, Rng* rng) {
    cfg.validate();
    ParameterSet ps;
    auto weight = [&](const std::string& name, std::int64_t r, std::int64_t c) {
        Tensor t({r, c});
        if (rng) {
            Rng stream = rng->child(name);
            for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = stream.normal(0.0, 0.02);
        }
        ps.add(name, std::move(t));
    };
    auto vec = [&](const std::string& name, std::int64_t n, double v) {
        ps.add(name, Tensor::full({n}, v));
    };

    weight("main.embed", cfg.vocab, cfg.token_embed_dim);
    for (int i = 0; i < cfg.main_layers; ++i)
        detail::add_block_params(ps, "main.layer" + std::to_string(i), cfg.main_dim, cfg.ff_mult, rng);
    vec("main.ln_f.g", cfg.main_dim, 1.0);
    vec("main.ln_f.b", cfg.main_dim, 0.0);
    weight("head.w1", cfg.main_dim, cfg.head_hidden);
    vec("head.b1", cfg.head_hidden, 0.0);
    weight("head.w2", cfg.head_hidden, cfg.vocab);
    vec("head.b2", cfg.vocab, 0.0);

    if (cfg.is_hybrid()) {
        weight("whisper.pad", 1, cfg.n_mel_bins);
        weight("whisper.proj.w1", cfg.n_mel_bins, cfg.slice_proj_hidden);
        vec("whisper.proj.b1", cfg.slice_proj_hidden, 0.0);
        weight("whisper.proj.w2", cfg.slice_proj_hidden, cfg.whisper_dim);
        vec("whisper.proj.b2", cfg.whisper_dim, 0.0);
        for (int i = 0; i < cfg.whisper_layers; ++i)
            detail::add_block_params(ps, "whisper.layer" + std::to_string(i), cfg.whisper_dim,
                                     cfg.ff_mult, rng);
    }
    return ps;
}

inline ParameterSet init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng = Rng(seed).child("init");
    return make_parameters(cfg, &rng);
}

// Optional training-time knobs threaded through the graph builders.
struct BuildOptions {
    double dropout = 0.0;
    Rng* dropout_rng = nullptr;
};

namespace detail {

constexpr double kLnEps = 1e-5;

inline Ref linear(Tape& t, Ref x, ParameterSet& ps, const std::string& prefix,
                  const std::string& w, const std::string& b) {
    return t.add_row(t.matmul(x, t.leaf(ps.at(prefix + w))), t.leaf(ps.at(prefix + b)));
}

// Pre-norm transformer decoder block:
//   x = x + Attn(LN(x));  x = x + FF(LN(x))
inline Ref decoder_block(Tape& t, Ref x, ParameterSet& ps, const std::string& prefix, int heads,
                         const BuildOptions& opt) {
    Ref a = t.layer_norm(x, t.leaf(ps.at(prefix + ".ln1.g")), t.leaf(ps.at(prefix + ".ln1.b")), kLnEps);
    Ref q = linear(t, a, ps, prefix, ".attn.wq", ".attn.bq");
    Ref k = linear(t, a, ps, prefix, ".attn.wk", ".attn.bk");
    Ref v = linear(t, a, ps, prefix, ".attn.wv", ".attn.bv");
    Ref mixed = t.causal_mha(q, k, v, heads);
    Ref attn_out = linear(t, mixed, ps, prefix, ".attn.wo", ".attn.bo");
    if (opt.dropout > 0.0) attn_out = t.dropout(attn_out, opt.dropout, *opt.dropout_rng);
    x = t.add(x, attn_out);

    Ref b = t.layer_norm(x, t.leaf(ps.at(prefix + ".ln2.g")), t.leaf(ps.at(prefix + ".ln2.b")), kLnEps);
    Ref h = t.gelu(linear(t, b, ps, prefix, ".ff.w1", ".ff.b1"));
    Ref ff_out = linear(t, h, ps, prefix, ".ff.w2", ".ff.b2");
    if (opt.dropout > 0.0) ff_out = t.dropout(ff_out, opt.dropout, *opt.dropout_rng);
    return t.add(x, ff_out);
}

inline Ref decoder_stack(Tape& t, Ref x, ParameterSet& ps, const std::string& module, int layers,
                         int heads, const BuildOptions& opt) {
    for (int i = 0; i < layers; ++i)
        x = decoder_block(t, x, ps, module + ".layer" + std::to_string(i), heads, opt);
    return x;
}

inline Ref lm_head(Tape& t, Ref x, ParameterSet& ps) {
    Ref h = t.gelu(t.add_row(t.matmul(x, t.leaf(ps.at("head.w1"))), t.leaf(ps.at("head.b1"))));
    return t.add_row(t.matmul(h, t.leaf(ps.at("head.w2"))), t.leaf(ps.at("head.b2")));
}

inline void check_inputs(const ModelConfig& cfg, std::span<const int> ids) {
    if (ids.empty()) fail_contract("forward: empty token sequence");
    if (static_cast<int>(ids.size()) > cfg.context)
        fail_contract("forward: sequence length ", ids.size(), " exceeds context ", cfg.context);
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] < 0 || ids[i] >= cfg.vocab)
            fail_contract("forward: token id ", ids[i], " at position ", i, " outside vocabulary [0,",
                          cfg.vocab, ")");
}

} // namespace detail

// Token-only forward graph. Row t of the result holds the pre-softmax
// predictive distribution for token t+1.
inline Ref build_gpt(Tape& t, const ModelConfig& cfg, ParameterSet& ps, std::span<const int> ids,
                     const BuildOptions& opt = {}) {
    if (cfg.is_hybrid()) fail_contract("build_gpt: config is the hybrid variant");
    detail::check_inputs(cfg, ids);
    const auto T = static_cast<std::int64_t>(ids.size());
    Ref x = t.embedding(t.leaf(ps.at("main.embed")), ids);
    x = t.add(x, t.input(sinusoidal_pe(T, cfg.main_dim)));
    x = detail::decoder_stack(t, x, ps, "main", cfg.main_layers, cfg.main_heads, opt);
    x = t.layer_norm(x, t.leaf(ps.at("main.ln_f.g")), t.leaf(ps.at("main.ln_f.b")), detail::kLnEps);
    return detail::lm_head(t, x, ps);
}

// Hybrid forward graph. The slice stream is shifted one position right with a
// learned pad frame, so fused row t sees tokens <= t but slices <= t-1: the
// predicted token t+1 never sees its own slice or the one before it.
inline Ref build_hybrid(Tape& t, const ModelConfig& cfg, ParameterSet& ps, std::span<const int> ids,
                        const MelFrameSequence& frames, const BuildOptions& opt = {}) {
    if (!cfg.is_hybrid()) fail_contract("build_hybrid: config is a token-only variant");
    detail::check_inputs(cfg, ids);
    if (frames.raw())
        fail_contract("build_hybrid: frames are raw; normalize them against corpus stats first");
    const auto T = static_cast<std::int64_t>(ids.size());
    if (frames.n_frames() != T)
        fail_contract("build_hybrid: ", T, " tokens vs ", frames.n_frames(), " frames");

    // Slice path.
    Ref slices;
    {
        Ref pad = t.leaf(ps.at("whisper.pad"));
        if (T == 1) {
            slices = pad;
        } else {
            Tensor past({T - 1, cfg.n_mel_bins});
            std::copy(frames.frames.data(), frames.frames.data() + (T - 1) * cfg.n_mel_bins,
                      past.data());
            slices = t.concat_rows(pad, t.input(std::move(past)));
        }
    }
    Ref h = t.gelu(t.add_row(t.matmul(slices, t.leaf(ps.at("whisper.proj.w1"))),
                             t.leaf(ps.at("whisper.proj.b1"))));
    Ref w = t.add_row(t.matmul(h, t.leaf(ps.at("whisper.proj.w2"))), t.leaf(ps.at("whisper.proj.b2")));
    w = t.add(w, t.input(sinusoidal_pe(T, cfg.whisper_dim)));
    w = detail::decoder_stack(t, w, ps, "whisper", cfg.whisper_layers, cfg.whisper_heads, opt);

    // Token path.
    Ref e = t.embedding(t.leaf(ps.at("main.embed")), ids);
    e = t.add(e, t.input(sinusoidal_pe(T, cfg.token_embed_dim)));

    // Early fusion and main stack.
    Ref x = t.concat_cols({e, w});
    x = detail::decoder_stack(t, x, ps, "main", cfg.main_layers, cfg.main_heads, opt);
    x = t.layer_norm(x, t.leaf(ps.at("main.ln_f.g")), t.leaf(ps.at("main.ln_f.b")), detail::kLnEps);
    return detail::lm_head(t, x, ps);
}

// Gradient-free forward passes returning the logits matrix.
inline Tensor forward_gpt(const ModelConfig& cfg, ParameterSet& ps, std::span<const int> ids) {
    Tape t(false);
    return t.value(build_gpt(t, cfg, ps, ids));
}

inline Tensor forward_hybrid(const ModelConfig& cfg, ParameterSet& ps, std::span<const int> ids,
                             const MelFrameSequence& frames) {
    Tape t(false);
    return t.value(build_hybrid(t, cfg, ps, ids, frames));
}

// Exact parameter accounting of the implementation, grouped by module path.
struct ParameterCountReport {
    std::int64_t total = 0;
    std::vector<std::pair<std::string, std::int64_t>> groups; // lexicographic
};

inline ParameterCountReport count_parameters(const ModelConfig& cfg) {
    ParameterSet ps = make_parameters(cfg, nullptr);
    static const std::vector<std::string> leaves = {"wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                                                    "w1", "b1", "w2", "b2", "g",  "b"};
    std::map<std::string, std::int64_t> agg;
    std::int64_t total = 0;
    for (const auto& [name, p] : ps) {
        total += p.value.numel();
        std::string group = name;
        const auto dot = name.rfind('.');
        if (dot != std::string::npos) {
            const std::string leaf = name.substr(dot + 1);
            if (std::find(leaves.begin(), leaves.end(), leaf) != leaves.end())
                group = name.substr(0, dot);
        }
        agg[group] += p.value.numel();
    }
    ParameterCountReport report;
    report.total = total;
    report.groups.assign(agg.begin(), agg.end());
    return report;
}

// Reference parameter totals reported for the three full-size variants.
// Informational only; the implementation asserts its own closed-form count.
inline double reported_reference_params(Variant v) {
    switch (v) {
        case Variant::gpt_s: return 3.7e6;
        case Variant::gpt_l: return 40.0e6;
        case Variant::hybrid: return 4.1e6;
    }
    return 0.0;
}

inline ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    if (!j.contains("variant")) fail_config("model config: missing 'variant'");
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    c = preset(c.variant);
    static const std::vector<std::string> keys = {
        "variant",        "vocab",           "context",       "main_layers",
        "main_dim",       "main_heads",      "ff_mult",       "head_hidden",
        "token_embed_dim", "whisper_layers", "whisper_dim",   "whisper_heads",
        "slice_proj_hidden", "n_mel_bins",   "spec_shift"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
            fail_config("model config: unknown key '", it.key(), "'");
    }
    auto get = [&](const char* k, int& field) {
        if (j.contains(k)) field = j.at(k).get<int>();
    };
    get("vocab", c.vocab);
    get("context", c.context);
    get("main_layers", c.main_layers);
    get("main_dim", c.main_dim);
    get("main_heads", c.main_heads);
    get("ff_mult", c.ff_mult);
    get("head_hidden", c.head_hidden);
    get("token_embed_dim", c.token_embed_dim);
    get("whisper_layers", c.whisper_layers);
    get("whisper_dim", c.whisper_dim);
    get("whisper_heads", c.whisper_heads);
    get("slice_proj_hidden", c.slice_proj_hidden);
    get("n_mel_bins", c.n_mel_bins);
    get("spec_shift", c.spec_shift);
    c.validate();
    return c;
}

} // namespace wgpt
