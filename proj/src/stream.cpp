#include "driftbench/stream.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <numeric>

#include "driftbench/rng.hpp"

namespace driftbench {

TaskSchedule propose_schedule(const TaskPools& pools, OrderPolicy policy, std::uint64_t seed) {
    std::vector<std::pair<std::string, std::int64_t>> tasks;
    for (const auto& [task, instances] : pools) {
        if (!instances.empty()) tasks.emplace_back(task, static_cast<std::int64_t>(instances.size()));
    }
    if (tasks.empty()) throw SpecError("cannot schedule: all task pools are empty");

    switch (policy) {
        case OrderPolicy::Random: {
            Rng rng = Rng::derive(seed, 0x5eed);
            rng.shuffle(tasks);
            break;
        }
        case OrderPolicy::AscSize:
            std::stable_sort(tasks.begin(), tasks.end(),
                             [](const auto& a, const auto& b) { return a.second < b.second; });
            break;
        case OrderPolicy::DescSize:
            std::stable_sort(tasks.begin(), tasks.end(),
                             [](const auto& a, const auto& b) { return a.second > b.second; });
            break;
    }

    TaskSchedule schedule;
    std::int64_t cum = 0;
    for (const auto& [task, size] : tasks) {
        schedule.order.push_back(task);
        schedule.sizes.push_back(size);
        schedule.mu.push_back(static_cast<double>(size) / 2.0 + static_cast<double>(cum));
        schedule.sigma.push_back(static_cast<double>(size) / 2.0);
        cum += size;
    }
    schedule.total = cum;
    return schedule;
}

namespace {

// Integer per-slot counts summing to `size`, proportional to the Gaussian
// density at slot centers, truncated to [0, N).
std::vector<std::int64_t> propose_counts(std::int64_t size, double mu, double sigma, std::int64_t n_slots) {
    std::vector<double> weight(static_cast<std::size_t>(n_slots), 0.0);
    double total = 0.0;
    if (sigma > 0) {
        for (std::int64_t t = 0; t < n_slots; ++t) {
            double z = (static_cast<double>(t) + 0.5 - mu) / sigma;
            weight[static_cast<std::size_t>(t)] = std::exp(-0.5 * z * z);
            total += weight[static_cast<std::size_t>(t)];
        }
    }
    std::vector<std::int64_t> counts(static_cast<std::size_t>(n_slots), 0);
    if (total <= 1e-300) {
        // Degenerate sigma or mu far outside the range: everything lands at
        // the nearest slot.
        std::int64_t slot = std::clamp(static_cast<std::int64_t>(std::llround(mu)), std::int64_t{0}, n_slots - 1);
        counts[static_cast<std::size_t>(slot)] = size;
        return counts;
    }
    std::vector<std::pair<double, std::int64_t>> remainders;
    remainders.reserve(static_cast<std::size_t>(n_slots));
    std::int64_t assigned = 0;
    for (std::int64_t t = 0; t < n_slots; ++t) {
        double share = weight[static_cast<std::size_t>(t)] / total * static_cast<double>(size);
        auto base = static_cast<std::int64_t>(std::floor(share));
        counts[static_cast<std::size_t>(t)] = base;
        assigned += base;
        remainders.emplace_back(share - static_cast<double>(base), t);
    }
    std::int64_t leftover = size - assigned;
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::int64_t i = 0; i < leftover; ++i)
        counts[static_cast<std::size_t>(remainders[static_cast<std::size_t>(i)].second)] += 1;
    return counts;
}

}  // namespace

Stream build_stream(const TaskSchedule& schedule, const TaskPools& pools, std::uint64_t seed,
                    int batch_size) {
    if (batch_size < 1) throw SpecError("batch_size must be >= 1");
    const std::int64_t n = schedule.total;
    const auto n_tasks = schedule.order.size();

    // Shuffled copy of each pool, consumed front to back as slots fill.
    std::vector<std::vector<const Instance*>> queue_per_task(n_tasks);
    for (std::size_t i = 0; i < n_tasks; ++i) {
        auto it = pools.find(schedule.order[i]);
        if (it == pools.end() || static_cast<std::int64_t>(it->second.size()) != schedule.sizes[i])
            throw SpecError("schedule does not match task pools for task '" + schedule.order[i] + "'");
        auto& q = queue_per_task[i];
        q.reserve(it->second.size());
        for (const auto& inst : it->second) q.push_back(&inst);
        Rng rng = Rng::derive(seed, 0x7a5c + i);
        rng.shuffle(q);
    }

    std::vector<std::vector<std::int64_t>> counts(n_tasks);
    for (std::size_t i = 0; i < n_tasks; ++i)
        counts[i] = propose_counts(schedule.sizes[i], schedule.mu[i], schedule.sigma[i], n);

    Stream stream;
    stream.batch_size = batch_size;
    stream.instances.reserve(static_cast<std::size_t>(n));
    std::deque<const Instance*> pending;
    std::vector<std::size_t> next_index(n_tasks, 0);
    for (std::int64_t t = 0; t < n; ++t) {
        for (std::size_t i = 0; i < n_tasks; ++i) {
            for (std::int64_t c = 0; c < counts[i][static_cast<std::size_t>(t)]; ++c)
                pending.push_back(queue_per_task[i][next_index[i]++]);
        }
        if (!pending.empty()) {
            stream.instances.push_back(*pending.front());
            pending.pop_front();
        }
    }
    // Slots can run dry when proposals cluster late; whatever is still queued
    // keeps its order at the tail.
    while (!pending.empty()) {
        stream.instances.push_back(*pending.front());
        pending.pop_front();
    }
    return stream;
}

std::vector<std::span<const Instance>> stream_batches(const Stream& stream) {
    std::vector<std::span<const Instance>> batches;
    const auto n = stream.instances.size();
    const auto b = static_cast<std::size_t>(stream.batch_size);
    for (std::size_t i = 0; i < n; i += b)
        batches.emplace_back(stream.instances.data() + i, std::min(b, n - i));
    return batches;
}

std::map<std::string, std::int64_t> task_windows_95(const Stream& stream) {
    std::map<std::string, std::int64_t> totals;
    for (const auto& inst : stream.instances) totals[inst.task_id] += 1;
    std::map<std::string, std::int64_t> needed;
    for (const auto& [task, count] : totals)
        needed[task] = static_cast<std::int64_t>(std::ceil(0.95 * static_cast<double>(count)));
    std::map<std::string, std::int64_t> seen, window;
    for (std::size_t i = 0; i < stream.instances.size(); ++i) {
        const auto& task = stream.instances[i].task_id;
        if (++seen[task] == needed[task])
            window[task] = static_cast<std::int64_t>(i) / stream.batch_size + 1;
    }
    return window;
}

void write_stream_csv(const std::string& path, const Stream& stream) {
    std::ofstream out(path);
    out << "slot,task_id\n";
    for (std::size_t i = 0; i < stream.instances.size(); ++i)
        out << i << ',' << stream.instances[i].task_id << '\n';
}

void write_schedule_csv(const std::string& path, const TaskSchedule& schedule) {
    std::ofstream out(path);
    out << "task,mu,sigma,count\n";
    char buf[64];
    for (std::size_t i = 0; i < schedule.order.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g", schedule.mu[i], schedule.sigma[i]);
        out << schedule.order[i] << ',' << buf << ',' << schedule.sizes[i] << '\n';
    }
}

TaskPools pools_by_task(const std::vector<Instance>& instances) {
    TaskPools pools;
    for (const auto& inst : instances) pools[inst.task_id].push_back(inst);
    return pools;
}

}  // namespace driftbench
