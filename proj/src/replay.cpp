#include "driftbench/replay.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace driftbench {

ForgettingTracker::ForgettingTracker(double alpha) : alpha_(alpha) {
    if (alpha <= 0.0 || alpha >= 1.0) throw ConfigError("tracker decay must lie in (0, 1)");
}

void ForgettingTracker::update(TokenId word, double loss_delta) {
    double& estimate = estimates_[word];  // starts at 0
    estimate = (1.0 - alpha_) * estimate + alpha_ * std::max(0.0, loss_delta);
}

double ForgettingTracker::estimate(TokenId word) const {
    auto it = estimates_.find(word);
    return it == estimates_.end() ? 0.0 : it->second;
}

ReplayMemory::ReplayMemory(std::size_t capacity) : capacity_(capacity) {}

void ReplayMemory::note_stream_words(const Instance& inst) {
    for (TokenId w : inst.label_tokens) word_counts_stream_[w] += 1;
}

void ReplayMemory::add_memory_words(const Instance& inst, std::int64_t sign) {
    for (TokenId w : inst.label_tokens) {
        auto it = word_counts_memory_.find(w);
        if (it == word_counts_memory_.end()) {
            word_counts_memory_[w] = sign;
        } else {
            it->second += sign;
            if (it->second == 0) word_counts_memory_.erase(it);
        }
    }
}

void ReplayMemory::reservoir_update(std::span<const Instance> batch, Rng& rng) {
    if (capacity_ < 1) throw ConfigError("reservoir_update requires capacity >= 1");
    for (const auto& inst : batch) {
        seen_count_ += 1;
        note_stream_words(inst);
        if (buffer_.size() < capacity_) {
            buffer_.push_back(inst);
            add_memory_words(inst, +1);
            continue;
        }
        std::uint64_t j = rng.uniform_below(static_cast<std::uint64_t>(seen_count_));
        if (j < capacity_) {
            add_memory_words(buffer_[j], -1);
            buffer_[j] = inst;
            add_memory_words(inst, +1);
        }
    }
}

std::vector<std::size_t> ReplayMemory::sample_indices(std::size_t k, Rng& rng) const {
    if (buffer_.empty()) throw ConfigError("sample from an empty replay memory");
    std::vector<std::size_t> out;
    out.reserve(k);
    if (k > buffer_.size()) {
        for (std::size_t i = 0; i < k; ++i)
            out.push_back(rng.uniform_below(buffer_.size()));
        return out;
    }
    // Partial Fisher-Yates over an index array.
    std::vector<std::size_t> indices(buffer_.size());
    std::iota(indices.begin(), indices.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + rng.uniform_below(indices.size() - i);
        std::swap(indices[i], indices[j]);
        out.push_back(indices[i]);
    }
    return out;
}

std::vector<Instance> ReplayMemory::sample_batch(std::size_t k, Rng& rng) const {
    std::vector<Instance> out;
    out.reserve(k);
    for (auto idx : sample_indices(k, rng)) out.push_back(buffer_[idx]);
    return out;
}

std::map<TokenId, double> ReplayMemory::target_distribution(WritePolicy policy,
                                                            const ForgettingTracker& tracker) const {
    std::map<TokenId, double> weights;
    double total = 0.0;
    for (const auto& [word, count] : word_counts_stream_) {
        double w = 0.0;
        switch (policy) {
            case WritePolicy::BalancedSqrt:
                w = std::sqrt(static_cast<double>(count));
                break;
            case WritePolicy::BalancedForget:
                w = static_cast<double>(count) * tracker.estimate(word);
                break;
            case WritePolicy::Reservoir:
                w = static_cast<double>(count);
                break;
        }
        if (w > 0.0) {
            weights[word] = w;
            total += w;
        }
    }
    for (auto& [word, w] : weights) w /= total;
    return weights;
}

namespace {

double kl_of_counts(const std::map<TokenId, std::int64_t>& mem_counts,
                    const std::map<TokenId, double>& target) {
    // 0.5 pseudo-count per word of the target support; memory mass outside
    // the support is ignored (the support defines the comparison domain).
    double denom = 0.0;
    for (const auto& [word, q] : target) {
        (void)q;
        auto it = mem_counts.find(word);
        denom += 0.5 + (it == mem_counts.end() ? 0.0 : static_cast<double>(it->second));
    }
    double kl = 0.0;
    for (const auto& [word, q] : target) {
        auto it = mem_counts.find(word);
        double p = (0.5 + (it == mem_counts.end() ? 0.0 : static_cast<double>(it->second))) / denom;
        kl += p * std::log(p / q);
    }
    return kl;
}

}  // namespace

double ReplayMemory::memory_kl(const std::map<TokenId, double>& target) const {
    return kl_of_counts(word_counts_memory_, target);
}

void ReplayMemory::balanced_update(const Instance& incoming, WritePolicy policy,
                                   const ForgettingTracker& tracker) {
    if (policy == WritePolicy::Reservoir)
        throw ConfigError("balanced_update called with the reservoir policy");
    seen_count_ += 1;
    note_stream_words(incoming);
    if (buffer_.size() < capacity_) {
        buffer_.push_back(incoming);
        add_memory_words(incoming, +1);
        return;
    }
    if (capacity_ == 0) return;

    auto target = target_distribution(policy, tracker);
    if (target.empty()) return;  // no measurable support yet

    const double current_kl = kl_of_counts(word_counts_memory_, target);
    double best_kl = current_kl;
    std::size_t best_slot = buffer_.size();
    std::map<TokenId, std::int64_t> scratch;
    for (std::size_t s = 0; s < buffer_.size(); ++s) {
        scratch = word_counts_memory_;
        for (TokenId w : buffer_[s].label_tokens) {
            auto it = scratch.find(w);
            it->second -= 1;
            if (it->second == 0) scratch.erase(it);
        }
        for (TokenId w : incoming.label_tokens) scratch[w] += 1;
        double kl = kl_of_counts(scratch, target);
        if (kl < best_kl) {
            best_kl = kl;
            best_slot = s;
        }
    }
    if (best_slot == buffer_.size()) return;  // no replacement decreases KL; discard

    add_memory_words(buffer_[best_slot], -1);
    buffer_[best_slot] = incoming;
    add_memory_words(incoming, +1);
    const double new_kl = kl_of_counts(word_counts_memory_, target);
    if (new_kl > current_kl + 1e-9)
        throw std::logic_error("balanced_update increased KL divergence");
}

void ReplayMemory::write(std::span<const Instance> batch, WritePolicy policy, Rng& rng,
                         const ForgettingTracker& tracker) {
    if (policy == WritePolicy::Reservoir) {
        reservoir_update(batch, rng);
        return;
    }
    for (const auto& inst : batch) balanced_update(inst, policy, tracker);
}

void ReplayMemory::dump(const std::string& jsonl_path, const std::string& sidecar_path,
                        const Vocabulary& vocab) const {
    {
        std::ofstream out(jsonl_path);
        if (!out) throw std::runtime_error("cannot open " + jsonl_path + " for writing");
        for (const auto& inst : buffer_) {
            nlohmann::json obj;
            obj["task_id"] = inst.task_id;
            obj["mask_span"] = {inst.span_begin, inst.span_end};
            nlohmann::json words = nlohmann::json::array();
            for (TokenId w : inst.label_tokens) words.push_back(vocab.surface(w));
            obj["label_tokens"] = std::move(words);
            out << obj.dump() << '\n';
        }
    }
    nlohmann::json side;
    side["seen_count"] = seen_count_;
    nlohmann::json counts;
    for (const auto& [word, count] : word_counts_memory_) counts[vocab.surface(word)] = count;
    side["word_counts_memory"] = std::move(counts);
    std::ofstream out(sidecar_path);
    if (!out) throw std::runtime_error("cannot open " + sidecar_path + " for writing");
    out << side.dump(2) << '\n';
}

std::vector<std::size_t> mir_rank(const std::vector<std::vector<double>>& before,
                                  const std::vector<std::vector<double>>& after, std::size_t k,
                                  MirVariant variant) {
    if (before.size() != after.size()) throw ConfigError("mir_rank: loss vectors differ in count");
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(before.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
        const auto& b = before[i];
        const auto& a = after[i];
        if (b.size() != a.size() || b.empty()) throw ConfigError("mir_rank: malformed per-token losses");
        double score;
        if (variant == MirVariant::Mean) {
            double sum = 0.0;
            for (std::size_t t = 0; t < b.size(); ++t) sum += a[t] - b[t];
            score = sum / static_cast<double>(b.size());
        } else {
            score = a[0] - b[0];
            for (std::size_t t = 1; t < b.size(); ++t) score = std::max(score, a[t] - b[t]);
        }
        scored.emplace_back(score, i);
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
        if (x.first != y.first) return x.first > y.first;
        return x.second < y.second;
    });
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k && i < scored.size(); ++i) out.push_back(scored[i].second);
    return out;
}

}  // namespace driftbench
