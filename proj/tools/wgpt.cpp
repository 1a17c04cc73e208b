// wgpt: end-to-end pipeline driver.
//   featurize  WAV -> log-mel (WGM1), optionally fitting/applying corpus stats
//   tokenize   mel -> coarse tokens (WGT1) via a k-means codebook (WGC1)
//   train      pre-train a model from a run-config JSON
//   eval       teacher-forced metrics for a checkpoint over a manifest split
//   sample     autoregressive decoding from a token-only checkpoint
//   params     parameter accounting for a model config
//   compare    multi-seed ablation across architectures
//   synth      synthetic corpora (hybrid-advantage, memorize)

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "wgpt/checkpoint.hpp"
#include "wgpt/compare.hpp"
#include "wgpt/dataset.hpp"
#include "wgpt/eval.hpp"
#include "wgpt/mel.hpp"
#include "wgpt/model.hpp"
#include "wgpt/resample.hpp"
#include "wgpt/sampler.hpp"
#include "wgpt/synth.hpp"
#include "wgpt/tokens.hpp"
#include "wgpt/train.hpp"
#include "wgpt/vq.hpp"
#include "wgpt/wav.hpp"

namespace fs = std::filesystem;
using namespace wgpt;

namespace {

unsigned worker_count(std::size_t jobs) {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("WGPT_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
    }
    return std::min<unsigned>(n, static_cast<unsigned>(std::max<std::size_t>(jobs, 1)));
}

// Runs fn(i) over [0, jobs) on a small pool. Collected errors are returned in
// index order so diagnostics are deterministic.
std::vector<std::pair<std::size_t, std::string>> parallel_files(
    std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    std::vector<std::pair<std::size_t, std::string>> errors;
    const unsigned workers = worker_count(jobs);
    if (workers <= 1) {
        for (std::size_t i = 0; i < jobs; ++i) {
            try {
                fn(i);
            } catch (const std::exception& e) {
                errors.emplace_back(i, e.what());
            }
        }
        return errors;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= jobs) return;
                try {
                    fn(i);
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lock(mu);
                    errors.emplace_back(i, e.what());
                }
            }
        });
    for (auto& t : pool) t.join();
    std::sort(errors.begin(), errors.end());
    return errors;
}

std::vector<fs::path> sorted_files_with_extension(const fs::path& dir, const std::string& ext) {
    if (!fs::is_directory(dir)) fail_config("not a directory: ", dir.string());
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ext) out.push_back(entry.path());
    std::sort(out.begin(), out.end());
    return out;
}

std::uint32_t file_crc(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) fail_parse("cannot open: ", p.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return crc32(bytes.data(), bytes.size());
}

// featurize.cache: "<output-name>\t<input-crc>\t<mode>" per line.
std::map<std::string, std::string> load_cache(const fs::path& path) {
    std::map<std::string, std::string> cache;
    std::ifstream f(path);
    std::string line;
    while (std::getline(f, line)) {
        const auto tab = line.find('\t');
        if (tab != std::string::npos) cache[line.substr(0, tab)] = line.substr(tab + 1);
    }
    return cache;
}

void save_cache(const fs::path& path, const std::map<std::string, std::string>& cache) {
    std::ofstream f(path, std::ios::trunc);
    for (const auto& [k, v] : cache) f << k << '\t' << v << '\n';
}

// ---- featurize ----

struct FeaturizeArgs {
    std::string in_dir, out_dir, stats_path;
    bool fit_stats = false;
};

int run_featurize(const FeaturizeArgs& args) {
    if (args.fit_stats && args.stats_path.empty())
        fail_config("featurize: --fit-stats requires --stats");
    const auto wavs = sorted_files_with_extension(args.in_dir, ".wav");
    fs::create_directories(args.out_dir);
    const fs::path cache_path = fs::path(args.out_dir) / "featurize.cache";
    auto cache = load_cache(cache_path);

    NormalizationStats stats;
    bool have_stats = false;
    if (!args.fit_stats && !args.stats_path.empty()) {
        stats = load_stats(args.stats_path);
        have_stats = true;
    }
    auto mode_tag = [&]() -> std::string {
        if (args.fit_stats || have_stats) {
            if (fs::exists(args.stats_path)) return "norm:" + std::to_string(file_crc(args.stats_path));
            return "norm:pending";
        }
        return "raw";
    };

    std::vector<std::uint32_t> crcs(wavs.size());
    std::vector<bool> fresh(wavs.size(), true);
    {
        const std::string mode = mode_tag();
        for (std::size_t i = 0; i < wavs.size(); ++i) {
            crcs[i] = file_crc(wavs[i]);
            const std::string out_name = wavs[i].stem().string() + ".wgm1";
            auto it = cache.find(out_name);
            if (it != cache.end() && it->second == std::to_string(crcs[i]) + "\t" + mode &&
                fs::exists(fs::path(args.out_dir) / out_name))
                fresh[i] = false;
        }
    }
    const bool all_cached = std::none_of(fresh.begin(), fresh.end(), [](bool b) { return b; });
    if (all_cached && (!args.fit_stats || fs::exists(args.stats_path))) {
        std::cout << "featurize: all " << wavs.size() << " outputs up to date\n";
        return 0;
    }

    // Fitting needs every file, so any change recomputes the whole corpus.
    std::vector<MelFrameSequence> mels(wavs.size());
    std::vector<bool> ok(wavs.size(), false);
    auto errors = parallel_files(wavs.size(), [&](std::size_t i) {
        AudioBuffer buf = load_wav(wavs[i]);
        if (buf.sample_rate != melspec::kSampleRate) buf = resample(buf, melspec::kSampleRate);
        mels[i] = causal_log_mel(buf);
        ok[i] = true;
    });

    if (args.fit_stats) {
        WelfordAccumulator acc;
        for (std::size_t i = 0; i < wavs.size(); ++i)
            if (ok[i]) acc.add(mels[i]); // file order: deterministic merge
        if (acc.frames() < 2) fail_config("featurize: not enough frames to fit stats");
        stats = acc.finalize("featurize:" + fs::path(args.in_dir).filename().string());
        save_stats(args.stats_path, stats);
        have_stats = true;
    }

    const std::string mode = mode_tag();
    auto write_errors = parallel_files(wavs.size(), [&](std::size_t i) {
        if (!ok[i]) return;
        const std::string out_name = wavs[i].stem().string() + ".wgm1";
        const fs::path out_path = fs::path(args.out_dir) / out_name;
        try {
            save_mel(out_path, have_stats ? apply_normalization(mels[i], stats) : mels[i]);
        } catch (...) {
            std::error_code ec;
            fs::remove(out_path, ec); // no partial outputs
            throw;
        }
    });
    errors.insert(errors.end(), write_errors.begin(), write_errors.end());

    for (std::size_t i = 0; i < wavs.size(); ++i) {
        const std::string out_name = wavs[i].stem().string() + ".wgm1";
        if (ok[i])
            cache[out_name] = std::to_string(crcs[i]) + "\t" + mode;
        else
            cache.erase(out_name);
    }
    save_cache(cache_path, cache);

    std::cout << "featurize: wrote " << (wavs.size() - errors.size()) << "/" << wavs.size()
              << " mel files to " << args.out_dir << "\n";
    for (const auto& [i, what] : errors)
        std::cerr << "featurize: FAILED " << wavs[i].string() << ": " << what << "\n";
    return errors.empty() ? 0 : 2;
}

// ---- tokenize ----

struct TokenizeArgs {
    std::string in_dir, out_dir, codebook_path;
    bool train_codebook = false;
    int vocab = kDefaultVocab;
    std::uint64_t seed = 1;
};

int run_tokenize(const TokenizeArgs& args) {
    const auto mel_files = sorted_files_with_extension(args.in_dir, ".wgm1");
    if (mel_files.empty()) fail_config("tokenize: no .wgm1 files in ", args.in_dir);
    fs::create_directories(args.out_dir);

    std::vector<MelFrameSequence> mels(mel_files.size());
    auto errors = parallel_files(mel_files.size(), [&](std::size_t i) {
        mels[i] = load_mel(mel_files[i]);
        if (!mels[i].raw())
            fail_contract("tokenize: ", mel_files[i].string(),
                          " holds normalized frames; the codebook quantizes raw mels");
    });
    if (!errors.empty()) {
        for (const auto& [i, what] : errors) std::cerr << "tokenize: " << what << "\n";
        return 2;
    }

    VqCodebook book;
    if (args.train_codebook) {
        std::vector<const MelFrameSequence*> ptrs;
        for (const auto& m : mels) ptrs.push_back(&m);
        book = train_vq(ptrs, args.vocab, args.seed,
                        "tokenize:" + fs::path(args.in_dir).filename().string());
        save_codebook(args.codebook_path, book);
        std::cout << "tokenize: trained k=" << book.k() << " codebook in " << book.iterations
                  << " iterations -> " << args.codebook_path << "\n";
    } else {
        if (!fs::exists(args.codebook_path))
            fail_config("tokenize: codebook ", args.codebook_path,
                        " not found (pass --train-codebook to create one)");
        book = load_codebook(args.codebook_path);
    }

    errors = parallel_files(mel_files.size(), [&](std::size_t i) {
        const fs::path out_path =
            fs::path(args.out_dir) / (mel_files[i].stem().string() + ".wgt1");
        save_tokens(out_path, encode_vq(mels[i], book));
    });
    std::cout << "tokenize: wrote " << (mel_files.size() - errors.size()) << "/" << mel_files.size()
              << " token files to " << args.out_dir << "\n";
    for (const auto& [i, what] : errors)
        std::cerr << "tokenize: FAILED " << mel_files[i].string() << ": " << what << "\n";
    return errors.empty() ? 0 : 2;
}

// ---- train / eval / sample / params / compare / synth ----

Dataset load_run_dataset(const TrainConfig& tc) {
    if (tc.manifest.empty()) fail_config("run config: /data/manifest is required");
    NormalizationStats stats;
    const NormalizationStats* stats_ptr = nullptr;
    if (!tc.stats.empty()) {
        stats = load_stats(tc.stats);
        stats_ptr = &stats;
    }
    return load_dataset(tc.manifest, stats_ptr, tc.model.is_hybrid());
}

int run_train(const std::string& config_path, const std::string& resume, bool verbose) {
    std::ifstream f(config_path);
    if (!f) fail_config("cannot open config: ", config_path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        fail_config("config ", config_path, ": ", e.what());
    }
    TrainConfig tc = train_config_from_json(j);
    Dataset ds = load_run_dataset(tc);
    std::cout << "train: " << ds.train.size() << " train / " << ds.val.size()
              << " val utterances, model " << variant_name(tc.model.variant) << " ("
              << count_parameters(tc.model).total << " params)\n";
    if (!tc.out_dir.empty()) {
        fs::create_directories(tc.out_dir);
        std::ofstream archived(fs::path(tc.out_dir) / "config.json", std::ios::trunc);
        archived << canonical_json(train_config_to_json(tc));
    }
    std::optional<fs::path> resume_path;
    if (!resume.empty()) resume_path = resume;
    TrainResult res = train(tc, ds, resume_path, verbose);
    std::cout << "train: " << res.steps << " steps in " << res.log.wall_seconds << " s";
    if (!res.log.steps.empty()) std::cout << ", final loss " << res.log.steps.back().loss;
    if (res.best_val_nll < std::numeric_limits<double>::infinity())
        std::cout << ", best val nll " << res.best_val_nll;
    std::cout << "\n";
    if (!res.last_checkpoint.empty())
        std::cout << "train: last checkpoint " << res.last_checkpoint.string() << "\n";
    return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& manifest, const std::string& split,
             const std::string& stats_path, const std::string& csv) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    NormalizationStats stats;
    const NormalizationStats* stats_ptr = nullptr;
    if (!stats_path.empty()) {
        stats = load_stats(stats_path);
        stats_ptr = &stats;
    }
    Dataset ds = load_dataset(manifest, stats_ptr, ck.config.is_hybrid());
    const auto& examples = split == "val" ? ds.val : ds.train;
    if (split != "val" && split != "train") fail_config("eval: --split must be train or val");
    if (examples.empty()) fail_config("eval: split '", split, "' is empty");
    const Metrics m = evaluate(ck.config, ck.params, examples);
    std::vector<MetricsRow> rows;
    rows.push_back({variant_name(ck.config.variant), count_parameters(ck.config).total, m});
    std::cout << format_metrics_table(rows);
    if (!csv.empty()) {
        write_metrics_csv(csv, rows);
        std::cout << "eval: wrote " << csv << "\n";
    }
    return 0;
}

int run_sample(const std::string& ckpt_path, const std::string& prompt_path, const std::string& out,
               double temperature, int top_k, int n, std::uint64_t seed) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    TokenSequence prompt = load_tokens(prompt_path);
    SamplerConfig sc;
    sc.temperature = temperature;
    sc.top_k = top_k == 0 ? ck.config.vocab : top_k;
    sc.max_new_tokens = n;
    sc.seed = seed;
    TokenSequence generated = sample(ck.config, ck.params, prompt, sc);
    save_tokens(out, generated);
    std::cout << "sample: " << prompt.size() << " prompt + " << (generated.size() - prompt.size())
              << " new tokens -> " << out << "\n";
    return 0;
}

int run_params(const std::string& config_path, const std::string& variant) {
    ModelConfig cfg;
    if (!variant.empty()) {
        cfg = ModelConfig::preset(variant_from_name(variant));
    } else {
        std::ifstream f(config_path);
        if (!f) fail_config("cannot open config: ", config_path);
        nlohmann::json j = nlohmann::json::parse(f);
        cfg = ModelConfig::from_json(j.contains("model") ? j.at("model") : j);
    }
    const ParameterCountReport report = count_parameters(cfg);
    std::cout << "parameter breakdown for " << variant_name(cfg.variant) << ":\n";
    for (const auto& [group, n] : report.groups)
        std::cout << "  " << std::left << std::setw(28) << group << std::right << std::setw(12) << n
                  << "\n";
    std::cout << "  " << std::left << std::setw(28) << "TOTAL" << std::right << std::setw(12)
              << report.total << "\n";
    if (cfg == ModelConfig::preset(cfg.variant)) {
        std::cout << "  reported reference: " << reported_reference_params(cfg.variant) / 1e6
                  << "M (paper-reported, not asserted)\n";
    }
    return 0;
}

int run_compare(const std::string& config_path, int n_seeds, const std::string& csv, bool verbose) {
    std::ifstream f(config_path);
    if (!f) fail_config("cannot open config: ", config_path);
    nlohmann::json j = nlohmann::json::parse(f);
    for (auto it = j.begin(); it != j.end(); ++it)
        if (it.key() != "models" && it.key() != "train" && it.key() != "data" && it.key() != "out_dir")
            fail_config("compare config: unknown key '/", it.key(), "'");
    if (!j.contains("models") || !j.at("models").is_object())
        fail_config("compare config: missing '/models' object");

    nlohmann::json base_json = j;
    base_json.erase("models");
    std::vector<std::pair<std::string, ModelConfig>> models;
    for (auto it = j.at("models").begin(); it != j.at("models").end(); ++it) {
        nlohmann::json one = base_json;
        one["model"] = it.value();
        TrainConfig tc = train_config_from_json(one);
        models.emplace_back(it.key(), tc.model);
    }
    nlohmann::json first = base_json;
    first["model"] = j.at("models").begin().value();
    TrainConfig base = train_config_from_json(first);

    NormalizationStats stats;
    const NormalizationStats* stats_ptr = nullptr;
    if (!base.stats.empty()) {
        stats = load_stats(base.stats);
        stats_ptr = &stats;
    }
    Dataset ds = load_dataset(base.manifest, stats_ptr, true);

    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < n_seeds; ++i) seeds.push_back(base.seed + static_cast<std::uint64_t>(i));
    const AblationReport report = ablation_compare(models, base, ds, seeds, verbose);
    std::cout << format_ablation_table(report);
    if (!csv.empty()) {
        write_ablation_csv(csv, report);
        std::cout << "compare: wrote " << csv << "\n";
    }
    return 0;
}

int run_synth(const std::string& out_dir, const std::string& profile, int n, int len, int vocab,
              std::uint64_t seed) {
    SynthSpec spec;
    spec.profile = profile;
    spec.n = n;
    spec.seed = seed;
    if (profile == "memorize") {
        spec.len = len > 0 ? len : 750;
        spec.vocab = vocab > 0 ? vocab : kDefaultVocab;
    } else {
        spec.len = len > 0 ? len : 256;
        spec.vocab = vocab > 0 ? vocab : 64;
    }
    const auto manifest = synthesize_corpus(out_dir, spec);
    std::cout << "synth: " << spec.n << " x " << spec.len << "-token sequences (vocab " << spec.vocab
              << ", profile " << spec.profile << ") -> " << manifest.string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"hybrid continuous-discrete audio-token language model pipeline"};
    app.require_subcommand(1);
    int rc = 0;

    FeaturizeArgs fa;
    auto* featurize = app.add_subcommand("featurize", "WAV directory -> WGM1 mel files");
    featurize->add_option("--in", fa.in_dir, "input directory of .wav files")->required();
    featurize->add_option("--out", fa.out_dir, "output directory")->required();
    featurize->add_option("--stats", fa.stats_path, "WGS1 stats path (fit or apply)");
    featurize->add_flag("--fit-stats", fa.fit_stats, "fit normalization stats over this corpus");
    featurize->callback([&] { rc = run_featurize(fa); });

    TokenizeArgs ta;
    auto* tokenize = app.add_subcommand("tokenize", "raw WGM1 mels -> WGT1 token files");
    tokenize->add_option("--in", ta.in_dir, "input directory of raw .wgm1 files")->required();
    tokenize->add_option("--out", ta.out_dir, "output directory")->required();
    tokenize->add_option("--codebook", ta.codebook_path, "WGC1 codebook path")->required();
    tokenize->add_flag("--train-codebook", ta.train_codebook, "train the codebook first");
    tokenize->add_option("--vocab", ta.vocab, "codebook size when training");
    tokenize->add_option("--seed", ta.seed, "codebook training seed");
    tokenize->callback([&] { rc = run_tokenize(ta); });

    std::string train_config, train_resume;
    bool train_verbose = false;
    auto* train_cmd = app.add_subcommand("train", "pre-train from a run-config JSON");
    train_cmd->add_option("--config", train_config, "run config JSON")->required();
    train_cmd->add_option("--resume", train_resume, "checkpoint to resume from");
    train_cmd->add_flag("--verbose", train_verbose, "log step losses");
    train_cmd->callback([&] { rc = run_train(train_config, train_resume, train_verbose); });

    std::string eval_ckpt, eval_manifest, eval_split = "val", eval_stats, eval_csv;
    auto* eval_cmd = app.add_subcommand("eval", "teacher-forced metrics for a checkpoint");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "WGP1 checkpoint")->required();
    eval_cmd->add_option("--manifest", eval_manifest, "dataset manifest")->required();
    eval_cmd->add_option("--split", eval_split, "train|val");
    eval_cmd->add_option("--stats", eval_stats, "WGS1 stats for raw mels");
    eval_cmd->add_option("--csv", eval_csv, "write metrics CSV here");
    eval_cmd->callback([&] { rc = run_eval(eval_ckpt, eval_manifest, eval_split, eval_stats, eval_csv); });

    std::string sample_ckpt, sample_prompt, sample_out;
    double sample_temp = 1.0;
    int sample_topk = 0, sample_n = 64;
    std::uint64_t sample_seed = 1;
    auto* sample_cmd = app.add_subcommand("sample", "autoregressive decoding (token-only models)");
    sample_cmd->add_option("--checkpoint", sample_ckpt, "WGP1 checkpoint")->required();
    sample_cmd->add_option("--prompt", sample_prompt, "WGT1 prompt")->required();
    sample_cmd->add_option("--out", sample_out, "WGT1 output")->required();
    sample_cmd->add_option("--temperature", sample_temp, "softmax temperature");
    sample_cmd->add_option("--top-k", sample_topk, "top-k truncation (0 = full vocabulary)");
    sample_cmd->add_option("--n", sample_n, "max new tokens");
    sample_cmd->add_option("--seed", sample_seed, "sampling seed");
    sample_cmd->callback([&] {
        rc = run_sample(sample_ckpt, sample_prompt, sample_out, sample_temp, sample_topk, sample_n,
                        sample_seed);
    });

    std::string params_config, params_variant;
    auto* params_cmd = app.add_subcommand("params", "parameter count breakdown");
    params_cmd->add_option("--config", params_config, "model or run config JSON");
    params_cmd->add_option("--variant", params_variant, "gpt_s|gpt_l|hybrid preset");
    params_cmd->callback([&] {
        if (params_config.empty() && params_variant.empty())
            fail_config("params: pass --config or --variant");
        rc = run_params(params_config, params_variant);
    });

    std::string compare_config, compare_csv;
    int compare_seeds = 3;
    bool compare_verbose = false;
    auto* compare_cmd = app.add_subcommand("compare", "multi-seed architecture ablation");
    compare_cmd->add_option("--config", compare_config, "compare config JSON")->required();
    compare_cmd->add_option("--seeds", compare_seeds, "number of seeds");
    compare_cmd->add_option("--csv", compare_csv, "write per-seed CSV here");
    compare_cmd->add_flag("--verbose", compare_verbose, "log each run");
    compare_cmd->callback([&] { rc = run_compare(compare_config, compare_seeds, compare_csv, compare_verbose); });

    std::string synth_out, synth_profile;
    int synth_n = 200, synth_len = 0, synth_vocab = 0;
    std::uint64_t synth_seed = 1;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
    synth_cmd->add_option("--out", synth_out, "output directory")->required();
    synth_cmd->add_option("--profile", synth_profile, "hybrid-advantage|memorize")->required();
    synth_cmd->add_option("--n", synth_n, "number of sequences");
    synth_cmd->add_option("--len", synth_len, "tokens per sequence (profile default if 0)");
    synth_cmd->add_option("--vocab", synth_vocab, "vocabulary size (profile default if 0)");
    synth_cmd->add_option("--seed", synth_seed, "generation seed");
    synth_cmd->callback([&] { rc = run_synth(synth_out, synth_profile, synth_n, synth_len, synth_vocab, synth_seed); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return rc;
}
