#pragma once

#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "wgpt/eval.hpp"
#include "wgpt/train.hpp"

namespace wgpt {

// Multi-seed ablation: trains each named architecture on the same data with
// the same seed list and reports mean +/- std of the validation metrics.

struct AblationCell {
    std::uint64_t seed;
    Metrics metrics;
};

struct AblationRow {
    std::string name;
    std::int64_t n_params = 0;
    std::vector<AblationCell> cells;
    double nll_mean = 0, nll_std = 0;
    double ppl_mean = 0, ppl_std = 0;
    double acc_mean = 0, acc_std = 0;
};

struct AblationReport {
    std::vector<AblationRow> rows;
    // Sign of mean val NLL(hybrid) - mean val NLL(gpt_s): negative means the
    // hybrid wins. Populated when both named rows are present.
    int hybrid_minus_gpt_s_sign = 0;
    double hybrid_gap = 0.0; // gpt_s mean - hybrid mean (positive: hybrid better)

    const AblationRow* find(const std::string& name) const {
        for (const auto& r : rows)
            if (r.name == name) return &r;
        return nullptr;
    }
};

namespace detail {

inline void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
    const auto n = static_cast<double>(xs.size());
    mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    sd = xs.size() > 1 ? std::sqrt(acc / (n - 1.0)) : 0.0;
}

} // namespace detail

inline AblationReport ablation_compare(const std::vector<std::pair<std::string, ModelConfig>>& models,
                                       const TrainConfig& base, const Dataset& dataset,
                                       const std::vector<std::uint64_t>& seeds,
                                       bool verbose = false) {
    if (seeds.size() < 3) fail_contract("ablation_compare: need at least 3 seeds, got ", seeds.size());
    if (dataset.val.empty()) fail_contract("ablation_compare: empty validation split");
    AblationReport report;
    for (const auto& [name, cfg] : models) {
        AblationRow row;
        row.name = name;
        row.n_params = count_parameters(cfg).total;
        std::vector<double> nlls, ppls, accs;
        for (std::uint64_t seed : seeds) {
            TrainConfig tc = base;
            tc.model = cfg;
            tc.seed = seed;
            tc.out_dir.clear(); // in-memory runs only
            if (verbose) std::cout << "[compare] " << name << " seed " << seed << "\n";
            TrainResult res = train(tc, dataset);
            const Metrics m = evaluate(cfg, res.params, dataset.val);
            row.cells.push_back({seed, m});
            nlls.push_back(m.nll);
            ppls.push_back(m.ppl);
            accs.push_back(m.accuracy);
        }
        detail::mean_std(nlls, row.nll_mean, row.nll_std);
        detail::mean_std(ppls, row.ppl_mean, row.ppl_std);
        detail::mean_std(accs, row.acc_mean, row.acc_std);
        report.rows.push_back(std::move(row));
    }
    const AblationRow* hybrid = report.find("hybrid");
    const AblationRow* gpt_s = report.find("gpt_s");
    if (hybrid && gpt_s) {
        const double delta = hybrid->nll_mean - gpt_s->nll_mean;
        report.hybrid_minus_gpt_s_sign = delta < 0 ? -1 : (delta > 0 ? 1 : 0);
        report.hybrid_gap = -delta;
    }
    return report;
}

inline std::string format_ablation_table(const AblationReport& report) {
    std::ostringstream os;
    os << std::left << std::setw(12) << "Model" << std::right << std::setw(12) << "#Param"
       << std::setw(20) << "NLL (mean+/-std)" << std::setw(20) << "Accuracy" << std::setw(20)
       << "PPL" << "\n";
    for (const auto& r : report.rows) {
        std::ostringstream nll, acc, ppl;
        nll << std::fixed << std::setprecision(4) << r.nll_mean << "+/-" << std::setprecision(4)
            << r.nll_std;
        acc << std::fixed << std::setprecision(2) << 100.0 * r.acc_mean << "%+/-"
            << std::setprecision(2) << 100.0 * r.acc_std << "%";
        ppl << std::fixed << std::setprecision(3) << r.ppl_mean << "+/-" << std::setprecision(3)
            << r.ppl_std;
        os << std::left << std::setw(12) << r.name << std::right << std::setw(12) << r.n_params
           << std::setw(20) << nll.str() << std::setw(20) << acc.str() << std::setw(20) << ppl.str()
           << "\n";
    }
    if (report.hybrid_minus_gpt_s_sign != 0)
        os << "hybrid - gpt_s val NLL delta: " << (report.hybrid_minus_gpt_s_sign < 0 ? "-" : "+")
           << " (gap " << std::setprecision(4) << report.hybrid_gap << ")\n";
    return os.str();
}

inline void write_ablation_csv(const std::filesystem::path& path, const AblationReport& report) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) fail_parse("cannot write ablation csv: ", path.string());
    f << "model,n_params,seed,nll,ppl,acc\n";
    f << std::setprecision(17);
    for (const auto& r : report.rows)
        for (const auto& c : r.cells)
            f << r.name << ',' << r.n_params << ',' << c.seed << ',' << c.metrics.nll << ','
              << c.metrics.ppl << ',' << c.metrics.accuracy << '\n';
}

} // namespace wgpt
