#pragma once

#include <span>
#include <string>
#include <vector>

#include "driftbench/metrics.hpp"
#include "driftbench/model.hpp"
#include "driftbench/replay.hpp"
#include "driftbench/stream.hpp"

namespace driftbench {

enum class Method { Vanilla, ER, AGEM, ERMir, ERMirMax, Offline, OfflineOnePass };

const std::vector<std::pair<std::string, Method>>& method_names();
Method method_from_string(const std::string& name);
std::string method_to_string(Method method);
bool method_uses_memory(Method method);

struct TrainerConfig {
    Method method = Method::Vanilla;
    std::size_t memory_capacity = 0;
    int replay_size = 0;  // 0 means the stream batch size
    int agem_ref_size = 64;
    int mir_candidates = 64;
    int epochs = 1;
    std::int64_t eval_interval = 100;
    bool zero_visual = false;
    WritePolicy write_policy = WritePolicy::Reservoir;
    std::uint64_t seed = 1;

    void validate(int batch_size) const {
        if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
        if (method == Method::ER || method == Method::ERMir || method == Method::ERMirMax) {
            if (memory_capacity == 0) throw ConfigError("ER-family methods require a replay memory (M >= 1)");
            if (memory_capacity < static_cast<std::size_t>(batch_size))
                throw ConfigError("replay memory must hold at least one stream batch (M >= B)");
            int replay = replay_size > 0 ? replay_size : batch_size;
            if (static_cast<std::size_t>(replay) > memory_capacity)
                throw ConfigError("replay batch size exceeds memory capacity");
            if (method != Method::ER) {
                if (mir_candidates < 1) throw ConfigError("MIR candidate size must be >= 1");
                if (static_cast<std::size_t>(mir_candidates) > memory_capacity)
                    throw ConfigError("MIR candidate size exceeds memory capacity");
                if (replay > mir_candidates)
                    throw ConfigError("replay batch size exceeds the MIR candidate size");
            }
        }
        if (method == Method::AGEM) {
            if (memory_capacity == 0) throw ConfigError("AGEM requires a replay memory (M >= 1)");
            if (agem_ref_size < 1) throw ConfigError("AGEM reference sample size must be >= 1");
            if (static_cast<std::size_t>(agem_ref_size) > memory_capacity)
                throw ConfigError("AGEM reference sample size exceeds memory capacity");
        }
        if (method == Method::Offline && epochs < 1) throw ConfigError("offline training needs epochs >= 1");
    }
};

// Projects g onto the half-space of non-increasing reference loss:
// unchanged when <g, g_ref> >= 0, else g - (<g, g_ref>/<g_ref, g_ref>) g_ref.
template <typename T>
void agem_project(ParamSet<T>& g, const ParamSet<T>& g_ref) {
    const double dot = param_dot(g, g_ref);
    if (dot >= 0.0) return;
    const double ref_norm2 = param_dot(g_ref, g_ref);
    if (ref_norm2 == 0.0) return;
    g.axpy(-dot / ref_norm2, g_ref);
}

template <typename T>
struct RunResult {
    ModelState<T> model;
    std::vector<CheckpointRecord> records;
    ReplayMemory memory{0};
    ForgettingTracker tracker{};
    std::int64_t steps = 0;
    std::int64_t stream_instances_seen = 0;
};

namespace detail {

template <typename T>
struct EvalHook {
    std::span<const Instance> test;
    std::int64_t interval;
    bool zero_visual;
    Exec exec;
    std::vector<CheckpointRecord>* records;

    void after_step(const ModelState<T>& state, std::int64_t step) const {
        if (step % interval == 0) emit(state, step);
    }
    void final_record(const ModelState<T>& state, std::int64_t step) const { emit(state, step); }
    void emit(const ModelState<T>& state, std::int64_t step) const {
        ModelState<T> snapshot = state;  // training statistics stay untouched
        records->push_back(evaluate_checkpoint(snapshot, test, step, zero_visual, exec));
    }
};

// Per-word tracker refresh from the loss change of the just-applied update.
template <typename T>
void update_tracker(const ModelState<T>& state, std::span<const Instance> batch,
                    const std::vector<std::vector<double>>& before, bool zero_visual, Exec exec,
                    ForgettingTracker& tracker) {
    auto after = per_token_losses(state, batch, zero_visual, exec);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& labels = batch[i].label_tokens;
        for (std::size_t t = 0; t < labels.size(); ++t)
            tracker.update(labels[t], after[i][t] - before[i][t]);
    }
}

}  // namespace detail

template <typename T>
RunResult<T> run_vanilla(const TrainerConfig& tc, ModelState<T> model, const Stream& stream,
                         std::span<const Instance> test, Exec exec) {
    tc.validate(stream.batch_size);
    RunResult<T> result;
    detail::EvalHook<T> hook{test, tc.eval_interval, tc.zero_visual, exec, &result.records};
    ParamSet<T> grads(model.cfg);
    for (auto batch : stream_batches(stream)) {
        loss_and_grad(model, batch, tc.zero_visual, exec, grads);
        optimizer_step(model, grads);
        result.steps += 1;
        result.stream_instances_seen += static_cast<std::int64_t>(batch.size());
        hook.after_step(model, result.steps);
    }
    hook.final_record(model, result.steps);
    result.model = std::move(model);
    return result;
}

template <typename T>
RunResult<T> run_er(const TrainerConfig& tc, ModelState<T> model, const Stream& stream,
                    std::span<const Instance> test, Exec exec) {
    tc.validate(stream.batch_size);
    RunResult<T> result;
    result.memory = ReplayMemory(tc.memory_capacity);
    detail::EvalHook<T> hook{test, tc.eval_interval, tc.zero_visual, exec, &result.records};
    Rng rng = Rng::derive(tc.seed, 0xe12);
    const int replay_size = tc.replay_size > 0 ? tc.replay_size : stream.batch_size;
    const bool track = tc.write_policy == WritePolicy::BalancedForget;
    ParamSet<T> grads(model.cfg);
    std::vector<std::vector<double>> token_losses;
    for (auto batch : stream_batches(stream)) {
        std::vector<Instance> combined(batch.begin(), batch.end());
        if (!result.memory.empty()) {
            std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(replay_size), result.memory.size());
            for (auto& inst : result.memory.sample_batch(k, rng)) combined.push_back(std::move(inst));
        }
        loss_and_grad(model, std::span<const Instance>(combined), tc.zero_visual, exec, grads,
                      track ? &token_losses : nullptr);
        optimizer_step(model, grads);
        if (track)
            detail::update_tracker(model, std::span<const Instance>(combined), token_losses,
                                   tc.zero_visual, exec, result.tracker);
        result.memory.write(batch, tc.write_policy, rng, result.tracker);
        result.steps += 1;
        result.stream_instances_seen += static_cast<std::int64_t>(batch.size());
        hook.after_step(model, result.steps);
    }
    hook.final_record(model, result.steps);
    result.model = std::move(model);
    return result;
}

template <typename T>
RunResult<T> run_er_mir(const TrainerConfig& tc, ModelState<T> model, const Stream& stream,
                        std::span<const Instance> test, Exec exec, MirVariant variant) {
    tc.validate(stream.batch_size);
    RunResult<T> result;
    result.memory = ReplayMemory(tc.memory_capacity);
    detail::EvalHook<T> hook{test, tc.eval_interval, tc.zero_visual, exec, &result.records};
    Rng rng = Rng::derive(tc.seed, 0xab1);
    const int replay_size = tc.replay_size > 0 ? tc.replay_size : stream.batch_size;
    const bool track = tc.write_policy == WritePolicy::BalancedForget;
    ParamSet<T> grads(model.cfg);
    std::vector<std::vector<double>> token_losses;
    for (auto batch : stream_batches(stream)) {
        std::vector<Instance> combined(batch.begin(), batch.end());
        if (!result.memory.empty()) {
            std::size_t c = std::min<std::size_t>(static_cast<std::size_t>(tc.mir_candidates),
                                                  result.memory.size());
            std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(replay_size), c);
            for (auto& inst :
                 mir_select(result.memory, model, batch, c, k, variant, rng, exec, tc.zero_visual))
                combined.push_back(std::move(inst));
        }
        loss_and_grad(model, std::span<const Instance>(combined), tc.zero_visual, exec, grads,
                      track ? &token_losses : nullptr);
        optimizer_step(model, grads);
        if (track)
            detail::update_tracker(model, std::span<const Instance>(combined), token_losses,
                                   tc.zero_visual, exec, result.tracker);
        result.memory.write(batch, tc.write_policy, rng, result.tracker);
        result.steps += 1;
        result.stream_instances_seen += static_cast<std::int64_t>(batch.size());
        hook.after_step(model, result.steps);
    }
    hook.final_record(model, result.steps);
    result.model = std::move(model);
    return result;
}

template <typename T>
RunResult<T> run_agem(const TrainerConfig& tc, ModelState<T> model, const Stream& stream,
                      std::span<const Instance> test, Exec exec) {
    tc.validate(stream.batch_size);
    RunResult<T> result;
    result.memory = ReplayMemory(tc.memory_capacity);
    detail::EvalHook<T> hook{test, tc.eval_interval, tc.zero_visual, exec, &result.records};
    Rng rng = Rng::derive(tc.seed, 0xa6e);
    ParamSet<T> grads(model.cfg), ref_grads(model.cfg);
    for (auto batch : stream_batches(stream)) {
        loss_and_grad(model, batch, tc.zero_visual, exec, grads);
        if (result.memory.size() >= static_cast<std::size_t>(tc.agem_ref_size)) {
            auto reference = result.memory.sample_batch(static_cast<std::size_t>(tc.agem_ref_size), rng);
            loss_and_grad(model, std::span<const Instance>(reference), tc.zero_visual, exec, ref_grads);
            agem_project(grads, ref_grads);
        }
        optimizer_step(model, grads);
        result.memory.reservoir_update(batch, rng);
        result.steps += 1;
        result.stream_instances_seen += static_cast<std::int64_t>(batch.size());
        hook.after_step(model, result.steps);
    }
    hook.final_record(model, result.steps);
    result.model = std::move(model);
    return result;
}

// i.i.d. comparator: seeded reshuffle each epoch, single epoch when one_pass.
template <typename T>
RunResult<T> run_offline(const TrainerConfig& tc, ModelState<T> model,
                         const std::vector<Instance>& dataset, int batch_size,
                         std::span<const Instance> test, Exec exec, bool one_pass) {
    tc.validate(batch_size);
    RunResult<T> result;
    detail::EvalHook<T> hook{test, tc.eval_interval, tc.zero_visual, exec, &result.records};
    ParamSet<T> grads(model.cfg);
    const int epochs = one_pass ? 1 : tc.epochs;
    std::vector<const Instance*> order;
    order.reserve(dataset.size());
    for (const auto& inst : dataset) order.push_back(&inst);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        Rng rng = Rng::derive(tc.seed, 0x0ff1 + static_cast<std::uint64_t>(epoch));
        rng.shuffle(order);
        std::vector<Instance> batch;
        for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
            batch.clear();
            for (std::size_t j = i; j < std::min(order.size(), i + static_cast<std::size_t>(batch_size)); ++j)
                batch.push_back(*order[j]);
            loss_and_grad(model, std::span<const Instance>(batch), tc.zero_visual, exec, grads);
            optimizer_step(model, grads);
            result.steps += 1;
            hook.after_step(model, result.steps);
        }
    }
    hook.final_record(model, result.steps);
    result.model = std::move(model);
    return result;
}

template <typename T>
RunResult<T> run_method(const TrainerConfig& tc, ModelState<T> model, const Stream& stream,
                        std::span<const Instance> test, Exec exec) {
    switch (tc.method) {
        case Method::Vanilla:
            return run_vanilla(tc, std::move(model), stream, test, exec);
        case Method::ER:
            return run_er(tc, std::move(model), stream, test, exec);
        case Method::ERMir:
            return run_er_mir(tc, std::move(model), stream, test, exec, MirVariant::Mean);
        case Method::ERMirMax:
            return run_er_mir(tc, std::move(model), stream, test, exec, MirVariant::Max);
        case Method::AGEM:
            return run_agem(tc, std::move(model), stream, test, exec);
        case Method::Offline:
            return run_offline(tc, std::move(model), stream.instances, stream.batch_size, test, exec,
                               false);
        case Method::OfflineOnePass:
            return run_offline(tc, std::move(model), stream.instances, stream.batch_size, test, exec,
                               true);
    }
    throw ConfigError("unknown training method");
}

}  // namespace driftbench
