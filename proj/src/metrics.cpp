#include "driftbench/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace driftbench {

double bleu_n(std::span<const TokenId> hypothesis, std::span<const TokenId> reference, int max_n) {
    if (max_n < 1 || max_n > 2) throw ConfigError("bleu_n supports max_n in {1, 2}");
    if (hypothesis.empty()) return 0.0;

    double log_precision_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        const auto hyp_grams = static_cast<std::int64_t>(hypothesis.size()) - (n - 1);
        if (hyp_grams <= 0) return 0.0;

        std::map<std::vector<TokenId>, std::int64_t> ref_counts;
        for (std::int64_t i = 0; i + n <= static_cast<std::int64_t>(reference.size()); ++i)
            ref_counts[std::vector<TokenId>(reference.begin() + i, reference.begin() + i + n)] += 1;

        std::map<std::vector<TokenId>, std::int64_t> hyp_counts;
        for (std::int64_t i = 0; i + n <= static_cast<std::int64_t>(hypothesis.size()); ++i)
            hyp_counts[std::vector<TokenId>(hypothesis.begin() + i, hypothesis.begin() + i + n)] += 1;

        std::int64_t matched = 0;
        for (const auto& [gram, count] : hyp_counts) {
            auto it = ref_counts.find(gram);
            if (it != ref_counts.end()) matched += std::min(count, it->second);
        }
        if (matched == 0) return 0.0;
        log_precision_sum += std::log(static_cast<double>(matched) / static_cast<double>(hyp_grams));
    }

    double bleu = std::exp(log_precision_sum / max_n);
    if (hypothesis.size() < reference.size())
        bleu *= std::exp(1.0 - static_cast<double>(reference.size()) / static_cast<double>(hypothesis.size()));
    return bleu;
}

ForgettingReport forgetting_metric(const std::vector<CheckpointRecord>& records,
                                   const std::map<std::string, std::int64_t>& task_windows) {
    if (records.empty()) throw ConfigError("forgetting_metric needs at least one checkpoint record");
    const CheckpointRecord& final_record = records.back();
    ForgettingReport report;
    double sum = 0.0;
    for (const auto& [task, final_metrics] : final_record.per_task) {
        auto wit = task_windows.find(task);
        std::int64_t window = wit == task_windows.end() ? std::numeric_limits<std::int64_t>::max()
                                                        : wit->second;
        if (wit == task_windows.end()) report.flagged.push_back(task + " (no stream window)");

        double best = std::numeric_limits<double>::infinity();
        bool found = false;
        for (const auto& rec : records) {
            if (rec.step > window) continue;
            auto it = rec.per_task.find(task);
            if (it == rec.per_task.end()) continue;
            if (it->second.log_ppl < best) best = it->second.log_ppl;
            found = true;
        }
        if (!found) {
            // No checkpoint inside the window: fall back to the first one
            // after it and flag the task.
            for (const auto& rec : records) {
                auto it = rec.per_task.find(task);
                if (it == rec.per_task.end()) continue;
                best = it->second.log_ppl;
                break;
            }
            report.flagged.push_back(task);
        }
        double f = final_metrics.log_ppl - best;
        report.per_task[task] = f;
        sum += f;
    }
    report.f_avg = report.per_task.empty() ? 0.0 : sum / static_cast<double>(report.per_task.size());
    return report;
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void write_checkpoint_csv(const std::string& path, const std::vector<CheckpointRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "step,task_id,log_ppl,bleu1,bleu2\n";
    for (const auto& rec : records) {
        out << rec.step << ",overall," << fmt(rec.overall_log_ppl) << ',' << fmt(rec.overall_bleu1) << ','
            << fmt(rec.overall_bleu2) << '\n';
        for (const auto& [task, tm] : rec.per_task)
            out << rec.step << ',' << task << ',' << fmt(tm.log_ppl) << ',' << fmt(tm.bleu1) << ','
                << fmt(tm.bleu2) << '\n';
    }
}

std::vector<CheckpointRecord> read_checkpoint_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::vector<CheckpointRecord> records;
    std::string line;
    if (!std::getline(in, line) || line != "step,task_id,log_ppl,bleu1,bleu2")
        throw ParseError(path + ": unexpected checkpoint CSV header");
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string step_s, task, ppl_s, b1_s, b2_s;
        if (!std::getline(ss, step_s, ',') || !std::getline(ss, task, ',') ||
            !std::getline(ss, ppl_s, ',') || !std::getline(ss, b1_s, ',') || !std::getline(ss, b2_s))
            throw ParseError(path + ": line " + std::to_string(lineno) + ": bad row");
        std::int64_t step = std::stoll(step_s);
        if (records.empty() || records.back().step != step || task == "overall") {
            if (task != "overall")
                throw ParseError(path + ": line " + std::to_string(lineno) + ": expected overall row first");
            records.emplace_back();
            records.back().step = step;
            records.back().overall_log_ppl = std::stod(ppl_s);
            records.back().overall_bleu1 = std::stod(b1_s);
            records.back().overall_bleu2 = std::stod(b2_s);
        } else {
            TaskMetrics tm;
            tm.log_ppl = std::stod(ppl_s);
            tm.bleu1 = std::stod(b1_s);
            tm.bleu2 = std::stod(b2_s);
            tm.count = 1;
            records.back().per_task[task] = tm;
        }
    }
    return records;
}

void write_forgetting_json(const std::string& path, const ForgettingReport& report) {
    nlohmann::json j;
    j["f_avg"] = report.f_avg;
    j["per_task"] = report.per_task;
    j["flagged"] = report.flagged;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << j.dump(2) << '\n';
}

void write_composition_json(const std::string& path, const CompositionReport& report) {
    nlohmann::json j;
    auto kind = [](const CompositionReport::KindStats& s) {
        nlohmann::json k;
        if (s.seen) k["seen"] = *s.seen;
        if (s.novel) k["novel"] = *s.novel;
        return k;
    };
    j["noun_adj"] = kind(report.noun_adj);
    j["noun_verb"] = kind(report.noun_verb);
    j["pooled"] = kind(report.pooled);
    j["seen_compositions"] = report.seen_compositions;
    j["novel_compositions"] = report.novel_compositions;
    j["warnings"] = report.warnings;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << j.dump(2) << '\n';
}

}  // namespace driftbench
