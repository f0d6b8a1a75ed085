#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "driftbench/stream.hpp"
#include "driftbench/synthetic.hpp"

using namespace driftbench;

namespace {

TaskPools fake_pools(std::initializer_list<std::pair<const char*, int>> sizes) {
    TaskPools pools;
    std::int64_t uid = 0;
    for (const auto& [task, n] : sizes) {
        for (int i = 0; i < n; ++i) {
            Instance inst;
            inst.task_id = task;
            inst.uid = uid++;
            inst.tokens = {Vocabulary::kMask};
            inst.label_tokens = {3};
            inst.span_begin = 0;
            inst.span_end = 1;
            pools[task].push_back(inst);
        }
    }
    return pools;
}

}  // namespace

TEST_CASE("propose_schedule computes mu and sigma from pool sizes") {
    auto pools = fake_pools({{"A", 100}, {"B", 300}});
    auto schedule = propose_schedule(pools, OrderPolicy::AscSize, 1);
    REQUIRE(schedule.order == std::vector<std::string>{"A", "B"});
    CHECK(schedule.mu == std::vector<double>{50.0, 250.0});
    CHECK(schedule.sigma == std::vector<double>{50.0, 150.0});
    CHECK(schedule.total == 400);
}

TEST_CASE("propose_schedule: single pool and order policies") {
    auto single = fake_pools({{"only", 10}});
    auto schedule = propose_schedule(single, OrderPolicy::Random, 7);
    CHECK(schedule.mu == std::vector<double>{5.0});
    CHECK(schedule.sigma == std::vector<double>{5.0});

    auto pools = fake_pools({{"A", 9}, {"B", 4}});
    CHECK(propose_schedule(pools, OrderPolicy::AscSize, 1).order ==
          std::vector<std::string>{"B", "A"});
    CHECK(propose_schedule(pools, OrderPolicy::DescSize, 1).order ==
          std::vector<std::string>{"A", "B"});

    TaskPools empty;
    CHECK_THROWS_AS(propose_schedule(empty, OrderPolicy::Random, 1), SpecError);
    empty["x"] = {};
    CHECK_THROWS_AS(propose_schedule(empty, OrderPolicy::Random, 1), SpecError);
}

TEST_CASE("random order depends on the seed but is reproducible") {
    auto pools = fake_pools({{"A", 5}, {"B", 5}, {"C", 5}, {"D", 5}, {"E", 5}, {"F", 5}});
    auto s1 = propose_schedule(pools, OrderPolicy::Random, 11);
    auto s2 = propose_schedule(pools, OrderPolicy::Random, 11);
    CHECK(s1.order == s2.order);
    bool differs = false;
    for (std::uint64_t seed = 12; seed < 20; ++seed)
        differs |= propose_schedule(pools, OrderPolicy::Random, seed).order != s1.order;
    CHECK(differs);
}

TEST_CASE("single task stream is a seeded shuffle of its pool") {
    auto pools = fake_pools({{"A", 50}});
    auto schedule = propose_schedule(pools, OrderPolicy::Random, 3);
    auto stream = build_stream(schedule, pools, 3, 10);
    REQUIRE(stream.instances.size() == 50);
    std::set<std::int64_t> uids;
    for (const auto& inst : stream.instances) uids.insert(inst.uid);
    CHECK(uids.size() == 50);
    bool shuffled = false;
    for (std::size_t i = 0; i < 50; ++i) shuffled |= stream.instances[i].uid != static_cast<std::int64_t>(i);
    CHECK(shuffled);
}

TEST_CASE("conservation: stream is a permutation of the pooled instances") {
    auto pools = fake_pools({{"A", 120}, {"B", 47}, {"C", 211}});
    auto schedule = propose_schedule(pools, OrderPolicy::Random, 5);
    auto stream = build_stream(schedule, pools, 5, 32);
    REQUIRE(static_cast<std::int64_t>(stream.instances.size()) == schedule.total);
    std::vector<std::int64_t> uids;
    for (const auto& inst : stream.instances) uids.push_back(inst.uid);
    std::sort(uids.begin(), uids.end());
    for (std::size_t i = 0; i < uids.size(); ++i) CHECK(uids[i] == static_cast<std::int64_t>(i));
}

TEST_CASE("far-separated small-sigma tasks dominate their halves") {
    auto pools = fake_pools({{"A", 100}, {"B", 100}});
    TaskSchedule schedule;
    schedule.order = {"A", "B"};
    schedule.sizes = {100, 100};
    schedule.mu = {50.0, 150.0};
    schedule.sigma = {10.0, 10.0};
    schedule.total = 200;
    auto stream = build_stream(schedule, pools, 1, 10);
    int first_half_a = 0;
    for (std::size_t i = 0; i < 100; ++i)
        if (stream.instances[i].task_id == "A") ++first_half_a;
    CHECK(first_half_a >= 90);
}

TEST_CASE("empirical task means stay close to the scheduled mu") {
    auto pools = fake_pools({{"A", 100}, {"B", 300}});
    auto schedule = propose_schedule(pools, OrderPolicy::AscSize, 2);
    auto stream = build_stream(schedule, pools, 2, 32);
    double mean_a = 0.0;
    int count_a = 0;
    for (std::size_t i = 0; i < stream.instances.size(); ++i) {
        if (stream.instances[i].task_id == "A") {
            mean_a += static_cast<double>(i);
            ++count_a;
        }
    }
    mean_a /= count_a;
    CHECK(std::abs(mean_a - 50.0) < 50.0);  // within sigma_A of mu_A
}

TEST_CASE("default synthetic config: mean-slot fidelity and boundary overlap") {
    SyntheticSpec spec;  // 20 nouns x 10 modifiers x 50 = 10000 train
    spec.val_per_composition = 0;
    spec.test_per_composition = 0;
    auto corpus = generate_synthetic_corpus(spec, 7);
    auto pools = pools_by_task(corpus.train);
    auto schedule = propose_schedule(pools, OrderPolicy::Random, 42);
    auto stream = build_stream(schedule, pools, 42, 32);
    REQUIRE(static_cast<std::int64_t>(stream.instances.size()) == schedule.total);

    std::map<std::string, std::pair<double, int>> stats;
    for (std::size_t i = 0; i < stream.instances.size(); ++i) {
        auto& [sum, count] = stats[stream.instances[i].task_id];
        sum += static_cast<double>(i);
        count += 1;
    }
    for (std::size_t t = 0; t < schedule.order.size(); ++t) {
        auto [sum, count] = stats.at(schedule.order[t]);
        double mean = sum / count;
        double tolerance = std::max(2.0, 0.1 * schedule.sigma[t]);
        CHECK(std::abs(mean - schedule.mu[t]) <= tolerance);
    }

    // Adjacent tasks overlap: some 10-slot window contains both of them.
    for (std::size_t t = 0; t + 1 < schedule.order.size(); ++t) {
        const auto& a = schedule.order[t];
        const auto& b = schedule.order[t + 1];
        bool found = false;
        for (std::size_t w = 0; w + 10 <= stream.instances.size() && !found; ++w) {
            bool has_a = false, has_b = false;
            for (std::size_t i = w; i < w + 10; ++i) {
                has_a |= stream.instances[i].task_id == a;
                has_b |= stream.instances[i].task_id == b;
            }
            found = has_a && has_b;
        }
        CHECK(found);
    }
}

TEST_CASE("same pools, seed and policy give identical streams") {
    auto pools = fake_pools({{"A", 40}, {"B", 25}, {"C", 60}});
    auto schedule = propose_schedule(pools, OrderPolicy::Random, 9);
    auto s1 = build_stream(schedule, pools, 9, 8);
    auto s2 = build_stream(schedule, pools, 9, 8);
    REQUIRE(s1.instances.size() == s2.instances.size());
    for (std::size_t i = 0; i < s1.instances.size(); ++i)
        CHECK(s1.instances[i].uid == s2.instances[i].uid);
}

TEST_CASE("stream_batches yields ceil(N/B) batches in order") {
    auto pools = fake_pools({{"A", 10}});
    auto schedule = propose_schedule(pools, OrderPolicy::Random, 4);
    auto stream = build_stream(schedule, pools, 4, 3);
    auto batches = stream_batches(stream);
    REQUIRE(batches.size() == 4);
    CHECK(batches[0].size() == 3);
    CHECK(batches[1].size() == 3);
    CHECK(batches[2].size() == 3);
    CHECK(batches[3].size() == 1);

    std::vector<std::int64_t> flat;
    for (auto batch : batches)
        for (const auto& inst : batch) flat.push_back(inst.uid);
    for (std::size_t i = 0; i < flat.size(); ++i) CHECK(flat[i] == stream.instances[i].uid);

    stream.batch_size = 10;
    CHECK(stream_batches(stream).size() == 1);
}

TEST_CASE("task windows cover 95% of each task's instances") {
    auto pools = fake_pools({{"A", 100}, {"B", 100}});
    auto schedule = propose_schedule(pools, OrderPolicy::AscSize, 6);
    auto stream = build_stream(schedule, pools, 6, 10);
    auto windows = task_windows_95(stream);
    REQUIRE(windows.count("A") == 1);
    REQUIRE(windows.count("B") == 1);
    for (const auto& [task, step] : windows) {
        std::int64_t seen = 0;
        for (std::int64_t i = 0; i < step * 10 && i < static_cast<std::int64_t>(stream.instances.size()); ++i)
            if (stream.instances[static_cast<std::size_t>(i)].task_id == task) ++seen;
        CHECK(seen >= 95);
    }
}

TEST_CASE("schedule and stream CSV dumps") {
    auto pools = fake_pools({{"A", 6}, {"B", 3}});
    auto schedule = propose_schedule(pools, OrderPolicy::DescSize, 8);
    auto stream = build_stream(schedule, pools, 8, 4);
    auto dir = std::filesystem::temp_directory_path();
    auto spath = (dir / "driftbench_schedule.csv").string();
    auto tpath = (dir / "driftbench_stream.csv").string();
    write_schedule_csv(spath, schedule);
    write_stream_csv(tpath, stream);

    std::ifstream sin(spath);
    std::string line;
    std::getline(sin, line);
    CHECK(line == "task,mu,sigma,count");
    std::getline(sin, line);
    CHECK(line == "A,3,3,6");

    std::ifstream tin(tpath);
    std::getline(tin, line);
    CHECK(line == "slot,task_id");
    int rows = 0;
    while (std::getline(tin, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 9);
    std::filesystem::remove(spath);
    std::filesystem::remove(tpath);
}
