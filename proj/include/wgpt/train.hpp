#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wgpt/checkpoint.hpp"
#include "wgpt/dataset.hpp"
#include "wgpt/eval.hpp"
#include "wgpt/model.hpp"

namespace wgpt {

struct TrainConfig {
    int epochs = 25;
    int crop_len = 750;
    int batch_size = 8;
    double lr_initial = 2e-4;
    double lr_after_epoch10 = 1e-4;
    std::uint64_t seed = 1;
    int eval_every = 0; // steps between mid-epoch validation passes; 0 = epoch end only
    double grad_clip = 0.0;
    double dropout = 0.0;
    double weight_decay = 0.0;
    double stop_loss = 0.0; // end the run once a step loss drops below; 0 = off
    std::string manifest;
    std::string stats; // WGS1 path; required when frames are raw and the model is hybrid
    std::string out_dir;
    ModelConfig model;

    void validate() const {
        model.validate();
        if (epochs < 1) fail_config("train: epochs must be >= 1");
        if (crop_len < 2) fail_config("train: crop_len must be >= 2");
        if (crop_len > model.context + 1)
            fail_config("train: crop_len ", crop_len, " exceeds model context ", model.context, " + 1");
        if (batch_size < 1) fail_config("train: batch_size must be >= 1");
        if (!(lr_initial > 0.0) || !(lr_after_epoch10 > 0.0))
            fail_config("train: learning rates must be positive");
        if (eval_every < 0) fail_config("train: eval_every must be >= 0");
        if (grad_clip < 0.0 || weight_decay < 0.0 || dropout < 0.0 || dropout >= 1.0)
            fail_config("train: bad regularization flags");
    }
};

// Piecewise-constant schedule: lr_initial through epoch 10, decayed afterward.
inline double lr_schedule(const TrainConfig& tc, int epoch) {
    if (epoch < 1) fail_contract("lr_schedule: epoch is 1-based, got ", epoch);
    return epoch <= 10 ? tc.lr_initial : tc.lr_after_epoch10;
}

// Shift-by-one target construction: inputs drop the last token, targets drop
// the first.
inline std::pair<std::vector<int>, std::vector<int>> make_targets(std::span<const int> tokens) {
    if (tokens.size() < 2)
        fail_contract("make_targets: need at least 2 tokens, got ", tokens.size());
    std::vector<int> inputs(tokens.begin(), tokens.end() - 1);
    std::vector<int> targets(tokens.begin() + 1, tokens.end());
    return {std::move(inputs), std::move(targets)};
}

// Uniform random crop of `crop_len` tokens (and the same frame rows, keeping
// alignment). Precondition: the example is long enough.
inline Example sample_crop(const Example& ex, int crop_len, Rng& rng) {
    const std::int64_t len = ex.tokens.size();
    if (len < crop_len)
        fail_contract("sample_crop: sequence '", ex.id, "' has ", len, " tokens < crop ", crop_len);
    const std::int64_t start =
        len == crop_len ? 0 : static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(len - crop_len + 1)));
    Example out;
    out.id = ex.id;
    out.tokens.vocab = ex.tokens.vocab;
    out.tokens.rate = ex.tokens.rate;
    out.tokens.source = ex.tokens.source;
    out.tokens.ids.assign(ex.tokens.ids.begin() + start, ex.tokens.ids.begin() + start + crop_len);
    if (ex.frames) {
        MelFrameSequence f;
        f.stats_id = ex.frames->stats_id;
        f.frames = Tensor({crop_len, melspec::kBins});
        std::copy(ex.frames->frames.data() + start * melspec::kBins,
                  ex.frames->frames.data() + (start + crop_len) * melspec::kBins, f.frames.data());
        out.frames = std::move(f);
    }
    return out;
}

struct TrainLog {
    struct StepRecord {
        std::int64_t step;
        int epoch;
        double lr;
        double loss;
    };
    struct EvalRecord {
        std::int64_t step;
        int epoch;
        std::string split;
        double nll;
        double ppl;
        double acc;
    };
    std::vector<StepRecord> steps;
    std::vector<EvalRecord> evals;
    std::vector<std::string> warnings;
    double wall_seconds = 0.0;

    void write_csv(const std::filesystem::path& path) const {
        std::ofstream f(path, std::ios::trunc);
        if (!f) fail_parse("cannot write train log: ", path.string());
        f << "step,epoch,lr,split,nll,ppl,acc\n";
        f << std::setprecision(17);
        std::size_t si = 0, ei = 0;
        // Interleave in step order, train rows first at equal step.
        while (si < steps.size() || ei < evals.size()) {
            const bool take_step =
                ei >= evals.size() || (si < steps.size() && steps[si].step <= evals[ei].step);
            if (take_step) {
                const auto& s = steps[si++];
                f << s.step << ',' << s.epoch << ',' << s.lr << ",train," << s.loss << ','
                  << std::exp(s.loss) << ",\n";
            } else {
                const auto& e = evals[ei++];
                f << e.step << ',' << e.epoch << ",," << e.split << ',' << e.nll << ',' << e.ppl
                  << ',' << e.acc << '\n';
            }
        }
    }
};

struct TrainResult {
    ParameterSet params;
    AdamState adam;
    TrainLog log;
    double best_val_nll = std::numeric_limits<double>::infinity();
    std::filesystem::path best_checkpoint;
    std::filesystem::path last_checkpoint;
    std::int64_t steps = 0;
};

namespace detail {

inline double train_one_example(const TrainConfig& tc, ParameterSet& params, const Example& ex,
                                double inv_batch, BuildOptions opt) {
    auto [inputs, targets] = make_targets(ex.tokens.ids);
    Tape tape;
    Ref logits;
    if (tc.model.is_hybrid()) {
        MelFrameSequence window;
        window.stats_id = ex.frames->stats_id;
        const std::int64_t L = static_cast<std::int64_t>(inputs.size());
        window.frames = Tensor({L, melspec::kBins});
        std::copy(ex.frames->frames.data(), ex.frames->frames.data() + L * melspec::kBins,
                  window.frames.data());
        logits = build_hybrid(tape, tc.model, params, inputs, window, opt);
    } else {
        logits = build_gpt(tape, tc.model, params, inputs, opt);
    }
    Ref loss = tape.cross_entropy(logits, targets);
    tape.backward(loss, inv_batch);
    return tape.value(loss).item();
}

[[noreturn]] inline void abort_on_nan(const TrainConfig& tc, const Example& ex, int epoch,
                                      std::int64_t step, double loss, const ParameterSet& params) {
    std::ostringstream os;
    os << "train: non-finite loss " << loss << " at step " << step << " epoch " << epoch
       << " on utterance '" << ex.id << "' (len " << ex.tokens.size() << ", grad norm "
       << params.grad_norm() << ", lr " << lr_schedule(tc, epoch) << ")";
    throw std::runtime_error(os.str());
}

} // namespace detail

// LLM-style pre-training: per epoch, one random crop per utterance in a
// seed-shuffled order, batched gradient accumulation, Adam with the
// piecewise-constant schedule. Deterministic given (seed, dataset): the
// epoch's shuffle and crops derive from Rng(seed).child("epoch", e), so a
// resumed run replays the identical stream.
inline TrainResult train(const TrainConfig& tc, const Dataset& dataset,
                         const std::optional<std::filesystem::path>& resume_from = {},
                         bool verbose = false) {
    tc.validate();
    if (dataset.train.empty()) fail_config("train: empty training split");
    if (tc.model.is_hybrid())
        for (const auto& ex : dataset.train)
            if (!ex.frames) fail_config("train: hybrid model needs frames; '", ex.id, "' has none");

    const auto t0 = std::chrono::steady_clock::now();
    TrainResult result;
    int start_epoch = 0;
    if (resume_from) {
        Checkpoint ck = load_checkpoint(*resume_from);
        if (!(ck.config == tc.model))
            fail_config("train: resume checkpoint config does not match the run config");
        result.params = std::move(ck.params);
        if (ck.adam) result.adam = std::move(*ck.adam);
        start_epoch = ck.epoch;
        result.steps = static_cast<std::int64_t>(ck.step);
    } else {
        result.params = init_parameters(tc.model, tc.seed);
    }

    const bool has_out = !tc.out_dir.empty();
    if (has_out) std::filesystem::create_directories(tc.out_dir);

    Rng dropout_rng = Rng(tc.seed).child("dropout");
    std::vector<std::size_t> order(dataset.train.size());

    auto run_eval = [&](int epoch) {
        if (dataset.val.empty()) return;
        const Metrics m = evaluate(tc.model, result.params, dataset.val);
        result.log.evals.push_back({result.steps, epoch, "val", m.nll, m.ppl, m.accuracy});
        if (verbose)
            std::cout << "  [val] step " << result.steps << " nll " << m.nll << " ppl " << m.ppl
                      << " acc " << m.accuracy << "\n";
        if (m.nll < result.best_val_nll) {
            result.best_val_nll = m.nll;
            if (has_out) {
                result.best_checkpoint = std::filesystem::path(tc.out_dir) / "best.wgp1";
                save_checkpoint(result.best_checkpoint, tc.model, result.params, &result.adam, epoch,
                                static_cast<std::uint64_t>(result.steps));
            }
        }
    };

    bool stop = false;
    for (int epoch = start_epoch + 1; epoch <= tc.epochs && !stop; ++epoch) {
        Rng epoch_rng = Rng(tc.seed).child("epoch", static_cast<std::uint64_t>(epoch));
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(epoch_rng.below(i))]);

        const double lr = lr_schedule(tc, epoch);
        std::vector<Example> batch;
        batch.reserve(static_cast<std::size_t>(tc.batch_size));
        auto flush_batch = [&] {
            if (batch.empty()) return;
            const double inv = 1.0 / static_cast<double>(batch.size());
            double batch_loss = 0.0;
            BuildOptions opt;
            opt.dropout = tc.dropout;
            opt.dropout_rng = &dropout_rng;
            for (const Example& ex : batch) {
                const double loss = detail::train_one_example(tc, result.params, ex, inv, opt);
                if (!std::isfinite(loss))
                    detail::abort_on_nan(tc, ex, epoch, result.steps + 1, loss, result.params);
                batch_loss += loss * inv;
            }
            if (tc.grad_clip > 0.0) clip_grad_norm(result.params, tc.grad_clip);
            adam_step(result.params, result.adam, lr, tc.weight_decay);
            result.steps += 1;
            result.log.steps.push_back({result.steps, epoch, lr, batch_loss});
            if (verbose && result.steps % 50 == 0)
                std::cout << "  step " << result.steps << " epoch " << epoch << " loss " << batch_loss
                          << "\n";
            if (tc.eval_every > 0 && result.steps % tc.eval_every == 0) run_eval(epoch);
            if (tc.stop_loss > 0.0 && batch_loss < tc.stop_loss) stop = true;
            batch.clear();
        };

        for (std::size_t idx : order) {
            if (stop) break;
            const Example& ex = dataset.train[idx];
            if (ex.tokens.size() < tc.crop_len) {
                result.log.warnings.push_back("skipped '" + ex.id + "': " +
                                              std::to_string(ex.tokens.size()) + " tokens < crop " +
                                              std::to_string(tc.crop_len));
                continue;
            }
            batch.push_back(sample_crop(ex, tc.crop_len, epoch_rng));
            if (batch.size() == static_cast<std::size_t>(tc.batch_size)) flush_batch();
        }
        if (!stop) flush_batch();
        run_eval(epoch);
        if (has_out) {
            char name[32];
            std::snprintf(name, sizeof(name), "epoch%04d.wgp1", epoch);
            result.last_checkpoint = std::filesystem::path(tc.out_dir) / name;
            save_checkpoint(result.last_checkpoint, tc.model, result.params, &result.adam, epoch,
                            static_cast<std::uint64_t>(result.steps));
        }
    }

    result.log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (has_out) result.log.write_csv(std::filesystem::path(tc.out_dir) / "train_log.csv");
    return result;
}

// ---- run-config JSON (the CLI's RunConfig document) ----

inline nlohmann::json train_config_to_json(const TrainConfig& tc) {
    return nlohmann::json{
        {"model", tc.model.to_json()},
        {"train",
         {{"epochs", tc.epochs},
          {"crop_len", tc.crop_len},
          {"batch_size", tc.batch_size},
          {"lr_initial", tc.lr_initial},
          {"lr_after_epoch10", tc.lr_after_epoch10},
          {"seed", tc.seed},
          {"eval_every", tc.eval_every},
          {"grad_clip", tc.grad_clip},
          {"dropout", tc.dropout},
          {"weight_decay", tc.weight_decay},
          {"stop_loss", tc.stop_loss}}},
        {"data", {{"manifest", tc.manifest}, {"stats", tc.stats}}},
        {"out_dir", tc.out_dir}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig tc;
    for (auto it = j.begin(); it != j.end(); ++it)
        if (it.key() != "model" && it.key() != "train" && it.key() != "data" && it.key() != "out_dir")
            fail_config("run config: unknown key '/", it.key(), "'");
    if (!j.contains("model")) fail_config("run config: missing '/model'");
    tc.model = ModelConfig::from_json(j.at("model"));
    if (j.contains("train")) {
        const auto& t = j.at("train");
        static const std::vector<std::string> keys = {"epochs",    "crop_len",  "batch_size",
                                                      "lr_initial", "lr_after_epoch10", "seed",
                                                      "eval_every", "grad_clip", "dropout",
                                                      "weight_decay", "stop_loss"};
        for (auto it = t.begin(); it != t.end(); ++it)
            if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
                fail_config("run config: unknown key '/train/", it.key(), "'");
        if (t.contains("epochs")) tc.epochs = t.at("epochs").get<int>();
        if (t.contains("crop_len")) tc.crop_len = t.at("crop_len").get<int>();
        if (t.contains("batch_size")) tc.batch_size = t.at("batch_size").get<int>();
        if (t.contains("lr_initial")) tc.lr_initial = t.at("lr_initial").get<double>();
        if (t.contains("lr_after_epoch10")) tc.lr_after_epoch10 = t.at("lr_after_epoch10").get<double>();
        if (t.contains("seed")) tc.seed = t.at("seed").get<std::uint64_t>();
        if (t.contains("eval_every")) tc.eval_every = t.at("eval_every").get<int>();
        if (t.contains("grad_clip")) tc.grad_clip = t.at("grad_clip").get<double>();
        if (t.contains("dropout")) tc.dropout = t.at("dropout").get<double>();
        if (t.contains("weight_decay")) tc.weight_decay = t.at("weight_decay").get<double>();
        if (t.contains("stop_loss")) tc.stop_loss = t.at("stop_loss").get<double>();
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        for (auto it = d.begin(); it != d.end(); ++it)
            if (it.key() != "manifest" && it.key() != "stats")
                fail_config("run config: unknown key '/data/", it.key(), "'");
        if (d.contains("manifest")) tc.manifest = d.at("manifest").get<std::string>();
        if (d.contains("stats")) tc.stats = d.at("stats").get<std::string>();
    }
    if (j.contains("out_dir")) tc.out_dir = j.at("out_dir").get<std::string>();
    tc.validate();
    return tc;
}

// Canonical form: sorted keys (nlohmann's default object ordering), two-space
// indent, trailing newline. parse -> serialize is byte-stable.
inline std::string canonical_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

} // namespace wgpt
