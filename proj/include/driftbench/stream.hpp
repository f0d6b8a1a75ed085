#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "driftbench/instance.hpp"

namespace driftbench {

using TaskPools = std::map<std::string, std::vector<Instance>>;

enum class OrderPolicy { Random, AscSize, DescSize };

// Per-task Gaussian placement: mu_i = |D_i|/2 + sum_{k<i} |D_k|, sigma_i = |D_i|/2.
struct TaskSchedule {
    std::vector<std::string> order;
    std::vector<double> mu;
    std::vector<double> sigma;
    std::vector<std::int64_t> sizes;
    std::int64_t total = 0;
};

struct Stream {
    std::vector<Instance> instances;
    int batch_size = 32;
};

TaskSchedule propose_schedule(const TaskPools& pools, OrderPolicy policy, std::uint64_t seed);

// Discretizes [0, N) into unit slots. Each task proposes per-slot counts
// proportional to its Gaussian density, truncated to the stream range and
// renormalized to place exactly |D_i| instances (largest-remainder rounding).
// A greedy pass fills slots in order, carrying overflow forward; proposals
// landing in one slot enter in schedule order.
Stream build_stream(const TaskSchedule& schedule, const TaskPools& pools, std::uint64_t seed,
                    int batch_size);

// ceil(N/B) batches in stream order; the last one may be short.
std::vector<std::span<const Instance>> stream_batches(const Stream& stream);

// Per-task stream step (1-based batch index) by which 95% of that task's
// instances have been visited; feeds the forgetting metric's windows.
std::map<std::string, std::int64_t> task_windows_95(const Stream& stream);

// Plot data: slot,task_id rows for the realized stream.
void write_stream_csv(const std::string& path, const Stream& stream);
// Per-task rows: task,mu,sigma,count.
void write_schedule_csv(const std::string& path, const TaskSchedule& schedule);

TaskPools pools_by_task(const std::vector<Instance>& instances);

}  // namespace driftbench
