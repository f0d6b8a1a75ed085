#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "driftbench/chunker.hpp"
#include "driftbench/model.hpp"
#include "driftbench/synthetic.hpp"

namespace driftbench {

// -(1/N) sum ln p(label); natural log, probabilities floored at 1e-12.
template <typename T>
double log_perplexity(const Tensor<T>& prob_rows, std::span<const TokenId> labels) {
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        double p = static_cast<double>(prob_rows.at(static_cast<int>(i), labels[i]));
        total += -std::log(std::max(p, detail::kProbFloor));
    }
    return total / static_cast<double>(labels.size());
}

// Sentence BLEU with clipped n-gram precisions up to max_n in {1, 2} and a
// brevity penalty for short hypotheses; 0 whenever any precision is 0.
double bleu_n(std::span<const TokenId> hypothesis, std::span<const TokenId> reference, int max_n);

struct TaskMetrics {
    double log_ppl = 0.0;
    double bleu1 = 0.0;
    double bleu2 = 0.0;
    std::int64_t count = 0;
};

struct CheckpointRecord {
    std::int64_t step = 0;
    std::map<std::string, TaskMetrics> per_task;
    double overall_log_ppl = 0.0;
    double overall_bleu1 = 0.0;
    double overall_bleu2 = 0.0;
};

struct ForgettingReport {
    std::map<std::string, double> per_task;
    double f_avg = 0.0;
    // Tasks whose window held no checkpoint (the first later one was used).
    std::vector<std::string> flagged;
};

// f_k = final PPL(D_k) - min PPL(D_k) over checkpoints within task k's
// window; negative values mean the model kept improving afterwards.
ForgettingReport forgetting_metric(const std::vector<CheckpointRecord>& records,
                                   const std::map<std::string, std::int64_t>& task_windows);

struct CompositionReport {
    struct KindStats {
        std::optional<double> seen;
        std::optional<double> novel;
    };
    KindStats noun_adj, noun_verb, pooled;
    std::map<std::string, double> seen_compositions;   // "modifier noun" -> mean log-PPL
    std::map<std::string, double> novel_compositions;
    std::vector<std::string> warnings;
};

void write_checkpoint_csv(const std::string& path, const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> read_checkpoint_csv(const std::string& path);
void write_forgetting_json(const std::string& path, const ForgettingReport& report);
void write_composition_json(const std::string& path, const CompositionReport& report);

// Forward pass over a test set: per-task and overall mean log-PPL plus mean
// sentence BLEU of the decoded spans.
template <typename T>
CheckpointRecord evaluate_checkpoint(const ModelState<T>& state, std::span<const Instance> test,
                                     std::int64_t step, bool zero_visual, Exec exec) {
    CheckpointRecord record;
    record.step = step;
    if (test.empty()) return record;

    struct Row {
        double ppl, b1, b2;
    };
    std::vector<Row> rows(test.size());
    parallel_for(exec, static_cast<int>(test.size()), [&](int i) {
        const auto& inst = test[static_cast<std::size_t>(i)];
        auto probs = forward_batch(state, std::span<const Instance>(&inst, 1), zero_visual, Exec::Serial);
        auto hyp = decode_span(probs[0]);
        rows[static_cast<std::size_t>(i)] = {
            log_perplexity(probs[0], inst.label_tokens),
            bleu_n(hyp, inst.label_tokens, 1),
            bleu_n(hyp, inst.label_tokens, 2),
        };
    });

    double sum_ppl = 0.0, sum_b1 = 0.0, sum_b2 = 0.0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        auto& tm = record.per_task[test[i].task_id];
        tm.log_ppl += rows[i].ppl;
        tm.bleu1 += rows[i].b1;
        tm.bleu2 += rows[i].b2;
        tm.count += 1;
        sum_ppl += rows[i].ppl;
        sum_b1 += rows[i].b1;
        sum_b2 += rows[i].b2;
    }
    for (auto& [task, tm] : record.per_task) {
        tm.log_ppl /= static_cast<double>(tm.count);
        tm.bleu1 /= static_cast<double>(tm.count);
        tm.bleu2 /= static_cast<double>(tm.count);
    }
    const double n = static_cast<double>(test.size());
    record.overall_log_ppl = sum_ppl / n;
    record.overall_bleu1 = sum_b1 / n;
    record.overall_bleu2 = sum_b2 / n;
    return record;
}

// Seen-vs-novel log-PPL, aggregated per composition first and then averaged
// over compositions within each kind. The seen side is restricted to regular
// test compositions built from atoms that occur in the held-out pairs.
template <typename T>
CompositionReport composition_report(const ModelState<T>& state, std::span<const Instance> regular_test,
                                     std::span<const Instance> comp_test,
                                     const std::vector<CompositionPair>& held_out,
                                     const Vocabulary& vocab, const Lemmatizer& lemmatizer,
                                     bool zero_visual, Exec exec) {
    CompositionReport report;
    std::vector<std::string> held_nouns, held_mods;
    for (const auto& h : held_out) {
        held_nouns.push_back(h.noun);
        held_mods.push_back(h.modifier);
    }
    auto noun_held = [&](const std::string& n) {
        return std::find(held_nouns.begin(), held_nouns.end(), n) != held_nouns.end();
    };
    auto mod_held = [&](const std::string& m) {
        for (const auto& hm : held_mods)
            if (modifier_matches_atom(m, hm)) return true;
        return false;
    };
    auto is_held_pair = [&](const std::string& m, const std::string& n) {
        for (const auto& h : held_out)
            if (h.noun == n && modifier_matches_atom(m, h.modifier)) return true;
        return false;
    };

    struct Acc {
        double sum = 0.0;
        std::int64_t n = 0;
        std::string kind;
    };
    auto accumulate = [&](std::span<const Instance> set, bool novel_side,
                          std::map<std::string, Acc>& groups) {
        std::vector<double> ppl(set.size());
        parallel_for(exec, static_cast<int>(set.size()), [&](int i) {
            const auto& inst = set[static_cast<std::size_t>(i)];
            auto probs = forward_batch(state, std::span<const Instance>(&inst, 1), zero_visual, Exec::Serial);
            ppl[static_cast<std::size_t>(i)] = log_perplexity(probs[0], inst.label_tokens);
        });
        for (std::size_t i = 0; i < set.size(); ++i) {
            for (const auto& pair : span_compositions(set[i], vocab, lemmatizer)) {
                bool held = is_held_pair(pair.modifier, pair.noun);
                if (novel_side && !held) continue;
                if (!novel_side) {
                    if (held) continue;  // cannot happen after a proper split
                    if (!noun_held(pair.noun) || !mod_held(pair.modifier)) continue;
                }
                auto& acc = groups[pair.modifier + " " + pair.noun];
                acc.sum += ppl[i];
                acc.n += 1;
                acc.kind = pair.kind;
            }
        }
    };

    std::map<std::string, Acc> seen_groups, novel_groups;
    accumulate(regular_test, false, seen_groups);
    accumulate(comp_test, true, novel_groups);

    auto summarize = [&](const std::map<std::string, Acc>& groups, std::map<std::string, double>& out,
                         std::optional<double>& adj, std::optional<double>& verb,
                         std::optional<double>& pooled) {
        double adj_sum = 0, verb_sum = 0, all_sum = 0;
        int adj_n = 0, verb_n = 0, all_n = 0;
        for (const auto& [key, acc] : groups) {
            double mean = acc.sum / static_cast<double>(acc.n);
            out[key] = mean;
            all_sum += mean;
            ++all_n;
            if (acc.kind == "noun-adj") {
                adj_sum += mean;
                ++adj_n;
            } else {
                verb_sum += mean;
                ++verb_n;
            }
        }
        if (adj_n > 0) adj = adj_sum / adj_n;
        if (verb_n > 0) verb = verb_sum / verb_n;
        if (all_n > 0) pooled = all_sum / all_n;
    };
    summarize(seen_groups, report.seen_compositions, report.noun_adj.seen, report.noun_verb.seen,
              report.pooled.seen);
    summarize(novel_groups, report.novel_compositions, report.noun_adj.novel, report.noun_verb.novel,
              report.pooled.novel);
    if (comp_test.empty())
        report.warnings.push_back("compositional test set is empty; novel side not measurable");
    return report;
}

}  // namespace driftbench
