#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "wgpt/dataset.hpp"
#include "wgpt/model.hpp"

namespace wgpt {

// Teacher-forced likelihood metrics in nats/token. ppl == exp(nll) is an
// invariant of construction, not a convention left to callers.
struct Metrics {
    double nll = 0.0;
    double ppl = 1.0;
    double accuracy = 0.0;
    std::int64_t n_tokens_scored = 0;

    Metrics(double nll_, double ppl_, double accuracy_, std::int64_t n)
        : nll(nll_), ppl(ppl_), accuracy(accuracy_), n_tokens_scored(n) {
        const double expect = std::exp(nll);
        if (std::abs(ppl - expect) > 1e-9 * std::max(1.0, expect))
            fail_contract("Metrics: ppl ", ppl, " != exp(nll) ", expect);
        if (accuracy < 0.0 || accuracy > 1.0)
            fail_contract("Metrics: accuracy ", accuracy, " outside [0,1]");
    }

    static Metrics from_sums(double nll_sum, std::int64_t correct, std::int64_t count) {
        if (count <= 0) fail_contract("Metrics: nothing scored");
        const double nll = nll_sum / static_cast<double>(count);
        return Metrics(nll, std::exp(nll), static_cast<double>(correct) / static_cast<double>(count),
                       count);
    }
};

namespace detail {

// Per-row -log softmax(logits)[target] and argmax (ties toward the lowest
// id), accumulated in 64-bit regardless of how the logits were produced.
inline void score_logits(const Tensor& logits, std::span<const int> targets, double& nll_sum,
                         std::int64_t& correct, std::int64_t& count) {
    const std::int64_t T = logits.rows(), V = logits.cols();
    for (std::int64_t i = 0; i < T; ++i) {
        const double* row = logits.data() + i * V;
        double mx = row[0];
        std::int64_t argmax = 0;
        for (std::int64_t j = 1; j < V; ++j)
            if (row[j] > mx) {
                mx = row[j];
                argmax = j;
            }
        double sum = 0.0;
        for (std::int64_t j = 0; j < V; ++j) sum += std::exp(row[j] - mx);
        const int target = targets[static_cast<std::size_t>(i)];
        nll_sum += std::log(sum) + mx - row[target];
        correct += argmax == target ? 1 : 0;
        count += 1;
    }
}

inline Tensor teacher_forced_logits(const ModelConfig& cfg, ParameterSet& params, const Example& ex,
                                    std::vector<int>& targets_out) {
    const std::int64_t max_tokens = static_cast<std::int64_t>(cfg.context) + 1;
    const std::int64_t L = std::min<std::int64_t>(ex.tokens.size(), max_tokens);
    if (L < 2) fail_contract("evaluate: utterance '", ex.id, "' too short to score (", L, " tokens)");
    std::span<const int> inputs(ex.tokens.ids.data(), static_cast<std::size_t>(L - 1));
    targets_out.assign(ex.tokens.ids.begin() + 1, ex.tokens.ids.begin() + L);
    if (cfg.is_hybrid()) {
        if (!ex.frames) fail_contract("evaluate: utterance '", ex.id, "' lacks frames for the hybrid");
        MelFrameSequence window;
        window.stats_id = ex.frames->stats_id;
        window.frames = Tensor({L - 1, melspec::kBins});
        std::copy(ex.frames->frames.data(), ex.frames->frames.data() + (L - 1) * melspec::kBins,
                  window.frames.data());
        return forward_hybrid(cfg, params, inputs, window);
    }
    return forward_gpt(cfg, params, inputs);
}

} // namespace detail

// Token-weighted teacher-forced metrics over a split.
inline Metrics evaluate(const ModelConfig& cfg, ParameterSet& params, std::span<const Example> split) {
    if (split.empty()) fail_contract("evaluate: empty split");
    double nll_sum = 0.0;
    std::int64_t correct = 0, count = 0;
    std::vector<int> targets;
    for (const Example& ex : split) {
        const Tensor logits = detail::teacher_forced_logits(cfg, params, ex, targets);
        detail::score_logits(logits, targets, nll_sum, correct, count);
    }
    return Metrics::from_sums(nll_sum, correct, count);
}

// Teacher-forced scoring restricted to token positions after `prompt_len`
// (1-based positions > prompt_len), with ground-truth audio frames supplying
// the continuation's slice stream.
inline Metrics hybrid_continuation_eval(const ModelConfig& cfg, ParameterSet& params,
                                        const Example& ex, std::int64_t prompt_len) {
    if (prompt_len < 0 || prompt_len >= ex.tokens.size())
        fail_contract("hybrid_continuation_eval: prompt_len ", prompt_len, " outside [0,",
                      ex.tokens.size(), ")");
    std::vector<int> targets;
    const Tensor logits = detail::teacher_forced_logits(cfg, params, ex, targets);
    const std::int64_t first_scored = std::max<std::int64_t>(prompt_len - 1, 0);
    double nll_sum = 0.0;
    std::int64_t correct = 0, count = 0;
    const std::int64_t n = static_cast<std::int64_t>(targets.size());
    if (first_scored >= n) fail_contract("hybrid_continuation_eval: nothing to score");
    Tensor tail({n - first_scored, logits.cols()});
    std::copy(logits.data() + first_scored * logits.cols(), logits.data() + n * logits.cols(),
              tail.data());
    std::vector<int> tail_targets(targets.begin() + first_scored, targets.end());
    detail::score_logits(tail, tail_targets, nll_sum, correct, count);
    return Metrics::from_sums(nll_sum, correct, count);
}

// Reference NLL / accuracy / PPL figures for the three model variants on the
// speech and music corpora, as published. Informational anchors for the
// consistency checks; absolute values are not reproduced at desk scale.
struct ReferenceRow {
    const char* dataset;
    const char* model;
    double params_millions;
    double nll;
    double accuracy_percent;
    double ppl;
};

inline std::span<const ReferenceRow> reference_results() {
    static const ReferenceRow rows[] = {
        {"speech", "gpt_s", 3.7, 2.02, 34.18, 7.54},
        {"speech", "gpt_l", 40.0, 1.94, 34.82, 6.96},
        {"speech", "hybrid", 4.0, 1.93, 35.05, 6.96},
        {"music", "gpt_s", 3.7, 2.78, 34.96, 16.12},
        {"music", "gpt_l", 40.0, 2.77, 35.72, 15.96},
        {"music", "hybrid", 4.0, 2.52, 38.47, 12.43},
    };
    return rows;
}

// ---- metrics reporting ----

struct MetricsRow {
    std::string model;
    std::int64_t n_params = 0;
    Metrics metrics;
};

inline std::string format_metrics_table(std::span<const MetricsRow> rows) {
    std::ostringstream os;
    os << std::left << std::setw(16) << "Model" << std::right << std::setw(12) << "#Param"
       << std::setw(10) << "NLL" << std::setw(12) << "Accuracy" << std::setw(10) << "PPL" << "\n";
    for (const auto& r : rows) {
        os << std::left << std::setw(16) << r.model << std::right << std::setw(12) << r.n_params
           << std::setw(10) << std::fixed << std::setprecision(4) << r.metrics.nll << std::setw(11)
           << std::setprecision(2) << 100.0 * r.metrics.accuracy << "%" << std::setw(10)
           << std::setprecision(4) << r.metrics.ppl << "\n";
    }
    return os.str();
}

inline void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRow> rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) fail_parse("cannot write metrics csv: ", path.string());
    f << "model,n_params,nll,accuracy,ppl,n_tokens\n";
    f << std::setprecision(17);
    for (const auto& r : rows)
        f << r.model << ',' << r.n_params << ',' << r.metrics.nll << ',' << r.metrics.accuracy << ','
          << r.metrics.ppl << ',' << r.metrics.n_tokens_scored << '\n';
}

} // namespace wgpt
