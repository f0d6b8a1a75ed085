#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "driftbench/instance.hpp"
#include "driftbench/model.hpp"
#include "driftbench/rng.hpp"

namespace driftbench {

// Per-word exponential moving average of clamped loss increase.
class ForgettingTracker {
public:
    explicit ForgettingTracker(double alpha = 0.05);

    void update(TokenId word, double loss_delta);
    double estimate(TokenId word) const;
    const std::map<TokenId, double>& estimates() const { return estimates_; }

private:
    double alpha_;
    std::map<TokenId, double> estimates_;
};

enum class WritePolicy { Reservoir, BalancedSqrt, BalancedForget };

// Fixed-capacity example buffer. Word counts are over masked-span tokens and
// maintained incrementally for both the visited stream and the buffer.
class ReplayMemory {
public:
    explicit ReplayMemory(std::size_t capacity);

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return buffer_.size(); }
    bool empty() const { return buffer_.empty(); }
    std::int64_t seen_count() const { return seen_count_; }
    const std::vector<Instance>& buffer() const { return buffer_; }
    const std::map<TokenId, std::int64_t>& word_counts_stream() const { return word_counts_stream_; }
    const std::map<TokenId, std::int64_t>& word_counts_memory() const { return word_counts_memory_; }

    // Classic reservoir sampling, one decision per incoming example.
    void reservoir_update(std::span<const Instance> batch, Rng& rng);

    // Single-replacement hypothesis search minimizing KL(p_mem || p_tgt);
    // incoming examples that cannot decrease the divergence are discarded.
    // The fill phase appends unconditionally.
    void balanced_update(const Instance& incoming, WritePolicy policy, const ForgettingTracker& tracker);

    void write(std::span<const Instance> batch, WritePolicy policy, Rng& rng,
               const ForgettingTracker& tracker);

    // k uniform draws, without replacement while k <= size.
    std::vector<Instance> sample_batch(std::size_t k, Rng& rng) const;
    std::vector<std::size_t> sample_indices(std::size_t k, Rng& rng) const;

    // Target word distribution of a balanced policy over the visited stream;
    // weight 0 words are outside the support.
    std::map<TokenId, double> target_distribution(WritePolicy policy,
                                                  const ForgettingTracker& tracker) const;
    // KL(p_mem || p_tgt) with 0.5 pseudo-counts on the target support.
    double memory_kl(const std::map<TokenId, double>& target) const;

    void dump(const std::string& jsonl_path, const std::string& sidecar_path,
              const Vocabulary& vocab) const;

private:
    void note_stream_words(const Instance& inst);
    void add_memory_words(const Instance& inst, std::int64_t sign);

    std::size_t capacity_;
    std::int64_t seen_count_ = 0;
    std::vector<Instance> buffer_;
    std::map<TokenId, std::int64_t> word_counts_stream_;
    std::map<TokenId, std::int64_t> word_counts_memory_;
};

// Scores MIR candidates by per-token loss increase; `mean` averages over the
// span, `max` takes the most-forgotten token. Returns candidate positions
// ordered by decreasing score, ties by position.
enum class MirVariant { Mean, Max };
std::vector<std::size_t> mir_rank(const std::vector<std::vector<double>>& before,
                                  const std::vector<std::vector<double>>& after, std::size_t k,
                                  MirVariant variant);

// Draw C candidates, apply one virtual optimizer step on a cloned state using
// the stream batch, and return the k candidates whose loss rose the most.
template <typename T>
std::vector<Instance> mir_select(const ReplayMemory& memory, const ModelState<T>& state,
                                 std::span<const Instance> stream_batch, std::size_t candidate_size,
                                 std::size_t k, MirVariant variant, Rng& rng, Exec exec,
                                 bool zero_visual = false) {
    if (memory.empty()) throw ConfigError("mir_select on an empty memory");
    if (candidate_size > memory.size())
        throw ConfigError("mir_select candidate size exceeds buffer length");
    if (k > candidate_size) throw ConfigError("mir_select k exceeds candidate size");

    auto indices = memory.sample_indices(candidate_size, rng);
    std::vector<Instance> candidates;
    candidates.reserve(candidate_size);
    for (auto idx : indices) candidates.push_back(memory.buffer()[idx]);

    auto before = per_token_losses(state, std::span<const Instance>(candidates), zero_visual, exec);

    ModelState<T> virtual_state = state;
    ParamSet<T> grads(state.cfg);
    loss_and_grad(virtual_state, stream_batch, zero_visual, exec, grads);
    optimizer_step(virtual_state, grads);
    auto after = per_token_losses(virtual_state, std::span<const Instance>(candidates), zero_visual, exec);

    auto order = mir_rank(before, after, k, variant);
    std::vector<Instance> selected;
    selected.reserve(k);
    for (auto idx : order) selected.push_back(candidates[idx]);
    return selected;
}

}  // namespace driftbench
