#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "driftbench/experiment.hpp"
#include "driftbench/replay.hpp"
#include "driftbench/synthetic.hpp"

using namespace driftbench;

namespace {

std::vector<Instance> word_instances(std::initializer_list<std::vector<TokenId>> spans) {
    std::vector<Instance> out;
    std::int64_t uid = 0;
    for (const auto& span : spans) {
        Instance inst;
        inst.label_tokens = span;
        inst.tokens.assign(span.size(), Vocabulary::kMask);
        inst.span_begin = 0;
        inst.span_end = static_cast<int>(span.size());
        inst.task_id = "t";
        inst.uid = uid++;
        out.push_back(std::move(inst));
    }
    return out;
}

std::map<TokenId, std::int64_t> recount(const ReplayMemory& mem) {
    std::map<TokenId, std::int64_t> counts;
    for (const auto& inst : mem.buffer())
        for (TokenId w : inst.label_tokens) counts[w] += 1;
    return counts;
}

}  // namespace

TEST_CASE("reservoir fill phase stores everything") {
    auto instances = word_instances({{3}, {4}, {5}, {6}, {7}});
    ReplayMemory mem(5);
    Rng rng(1);
    mem.reservoir_update(std::span<const Instance>(instances), rng);
    CHECK(mem.size() == 5);
    CHECK(mem.seen_count() == 5);
    CHECK(recount(mem) == mem.word_counts_memory());
}

TEST_CASE("reservoir M=1 keeps either of two examples with probability 1/2") {
    auto instances = word_instances({{3}, {4}});
    int kept_first = 0;
    const int trials = 100000;
    Rng rng(1234);
    for (int t = 0; t < trials; ++t) {
        ReplayMemory mem(1);
        mem.reservoir_update(std::span<const Instance>(instances), rng);
        if (mem.buffer()[0].uid == 0) ++kept_first;
    }
    double freq = static_cast<double>(kept_first) / trials;
    CHECK(std::abs(freq - 0.5) <= 0.01);
}

TEST_CASE("reservoir M=10 over 100 examples retains each with frequency ~0.1") {
    std::vector<Instance> instances;
    for (int i = 0; i < 100; ++i) {
        Instance inst;
        inst.label_tokens = {static_cast<TokenId>(3 + i)};
        inst.tokens = {Vocabulary::kMask};
        inst.span_begin = 0;
        inst.span_end = 1;
        inst.uid = i;
        instances.push_back(std::move(inst));
    }
    const int trials = 50000;
    std::vector<int> retained(100, 0);
    Rng rng(51);
    for (int t = 0; t < trials; ++t) {
        ReplayMemory mem(10);
        mem.reservoir_update(std::span<const Instance>(instances), rng);
        for (const auto& inst : mem.buffer()) retained[static_cast<std::size_t>(inst.uid)] += 1;
    }
    const double bound = 3.0 * std::sqrt(0.1 * 0.9 / trials);
    for (int i = 0; i < 100; ++i) {
        double freq = static_cast<double>(retained[static_cast<std::size_t>(i)]) / trials;
        CHECK(std::abs(freq - 0.1) <= bound);
    }
}

TEST_CASE("capacity is never exceeded and word counts match a recount") {
    auto corpus = [] {
        SyntheticSpec spec;
        spec.nouns = 4;
        spec.adjectives = 3;
        spec.verbs = 0;
        spec.train_per_composition = 20;
        spec.val_per_composition = 0;
        spec.test_per_composition = 0;
        return generate_synthetic_corpus(spec, 44);
    }();
    ReplayMemory mem(7);
    Rng rng(3);
    for (std::size_t i = 0; i < corpus.train.size(); i += 10) {
        std::size_t n = std::min<std::size_t>(10, corpus.train.size() - i);
        mem.reservoir_update(std::span<const Instance>(corpus.train.data() + i, n), rng);
        CHECK(mem.size() <= 7);
        CHECK(recount(mem) == mem.word_counts_memory());
    }
    CHECK(mem.seen_count() == static_cast<std::int64_t>(corpus.train.size()));
}

TEST_CASE("sample_batch draws uniformly without replacement") {
    auto instances = word_instances({{3}, {4}, {5}, {6}, {7}, {8}, {9}, {10}, {11}, {12}});
    ReplayMemory mem(10);
    Rng rng(2);
    mem.reservoir_update(std::span<const Instance>(instances), rng);

    SUBCASE("single-element buffer returns that instance") {
        ReplayMemory one(1);
        auto single = word_instances({{3}});
        one.reservoir_update(std::span<const Instance>(single), rng);
        auto got = one.sample_batch(1, rng);
        CHECK(got.size() == 1);
        CHECK(got[0].uid == 0);
    }

    SUBCASE("k equal to the buffer length permutes the buffer") {
        auto got = mem.sample_batch(10, rng);
        std::set<std::int64_t> uids;
        for (const auto& inst : got) uids.insert(inst.uid);
        CHECK(uids.size() == 10);
    }

    SUBCASE("draw frequencies are uniform across slots") {
        std::vector<int> hits(10, 0);
        const int draws = 10000;
        for (int t = 0; t < draws; ++t) {
            auto got = mem.sample_batch(1, rng);
            hits[static_cast<std::size_t>(got[0].uid)] += 1;
        }
        const double bound = 3.0 * std::sqrt(draws * 0.1 * 0.9);
        for (int i = 0; i < 10; ++i)
            CHECK(std::abs(hits[static_cast<std::size_t>(i)] - 1000.0) <= bound);
    }

    SUBCASE("k larger than the buffer draws with replacement") {
        auto got = mem.sample_batch(25, rng);
        CHECK(got.size() == 25);
    }

    SUBCASE("sampling an empty memory fails") {
        ReplayMemory empty(4);
        CHECK_THROWS(empty.sample_batch(1, rng));
    }
}

TEST_CASE("mir_rank scores by loss increase with deterministic tie-breaks") {
    SUBCASE("top-1 picks the larger increase") {
        std::vector<std::vector<double>> before = {{1.0}, {1.0}};
        std::vector<std::vector<double>> after = {{1.2}, {0.9}};
        auto order = mir_rank(before, after, 1, MirVariant::Mean);
        CHECK(order == std::vector<std::size_t>{0});
    }
    SUBCASE("k = C returns everything sorted by score") {
        std::vector<std::vector<double>> before = {{1.0}, {1.0}, {1.0}};
        std::vector<std::vector<double>> after = {{1.1}, {1.5}, {1.3}};
        auto order = mir_rank(before, after, 3, MirVariant::Mean);
        CHECK(order == std::vector<std::size_t>{1, 2, 0});
    }
    SUBCASE("mean and max variants diverge on the scripted fixture") {
        // candidate 0: deltas (+0.9, -0.3)  mean 0.3, max 0.9
        // candidate 1: deltas (+0.35, +0.35) mean 0.35, max 0.35
        std::vector<std::vector<double>> before = {{1.0, 1.0}, {1.0, 1.0}};
        std::vector<std::vector<double>> after = {{1.9, 0.7}, {1.35, 1.35}};
        CHECK(mir_rank(before, after, 1, MirVariant::Max) == std::vector<std::size_t>{0});
        CHECK(mir_rank(before, after, 1, MirVariant::Mean) == std::vector<std::size_t>{1});
    }
    SUBCASE("ties break by candidate position") {
        std::vector<std::vector<double>> before = {{1.0}, {1.0}};
        std::vector<std::vector<double>> after = {{1.5}, {1.5}};
        CHECK(mir_rank(before, after, 2, MirVariant::Mean) == std::vector<std::size_t>{0, 1});
    }
}

TEST_CASE("mir_select returns the k most interfered instances") {
    SyntheticSpec spec;
    spec.nouns = 3;
    spec.adjectives = 2;
    spec.verbs = 0;
    spec.train_per_composition = 10;
    spec.val_per_composition = 0;
    spec.test_per_composition = 0;
    auto corpus = generate_synthetic_corpus(spec, 17);
    EncoderConfig enc;
    enc.vocab_size = corpus.vocab.size();
    enc.hidden = 16;
    enc.layers = 1;
    enc.heads = 2;
    enc.ffn_hidden = 32;
    enc.visual_dim = spec.visual_dim;
    enc.lr = 1e-2;
    enc.seed = 6;
    auto model = init_model<Real>(enc);

    ReplayMemory mem(20);
    Rng rng(9);
    mem.reservoir_update(std::span<const Instance>(corpus.train.data(), 20), rng);
    auto stream_batch = std::span<const Instance>(corpus.train.data() + 20, 8);

    auto selected = mir_select(mem, model, stream_batch, 10, 4, MirVariant::Mean, rng, Exec::Serial);
    CHECK(selected.size() == 4);
    // The virtual step must leave the caller's state untouched.
    CHECK(model.step == 0);

    CHECK_THROWS(mir_select(mem, model, stream_batch, 21, 4, MirVariant::Mean, rng, Exec::Serial));
    CHECK_THROWS(mir_select(mem, model, stream_batch, 10, 11, MirVariant::Mean, rng, Exec::Serial));
    ReplayMemory empty(5);
    CHECK_THROWS(mir_select(empty, model, stream_batch, 1, 1, MirVariant::Mean, rng, Exec::Serial));
}

TEST_CASE("balanced-sqrt target follows square-root stream frequencies") {
    ReplayMemory mem(2);
    Rng rng(5);
    // Stream counts: word 3 -> 100, word 4 -> 1.
    std::vector<Instance> heavy;
    for (int i = 0; i < 100; ++i) {
        auto batch = word_instances({{3}});
        batch[0].uid = i;
        heavy.push_back(batch[0]);
    }
    auto light = word_instances({{4}});
    ReplayMemory counting(200);
    counting.reservoir_update(std::span<const Instance>(heavy), rng);
    counting.reservoir_update(std::span<const Instance>(light), rng);
    ForgettingTracker tracker;
    auto target = counting.target_distribution(WritePolicy::BalancedSqrt, tracker);
    REQUIRE(target.size() == 2);
    CHECK(target.at(3) == doctest::Approx(10.0 / 11.0));
    CHECK(target.at(4) == doctest::Approx(1.0 / 11.0));
}

TEST_CASE("balanced update replaces when KL strictly decreases and discards otherwise") {
    ForgettingTracker tracker;
    SUBCASE("all-a buffer accepts a b when that lowers the divergence") {
        ReplayMemory mem(4);
        auto filler = word_instances({{3}, {3}, {3}, {3}, {4}});
        for (std::size_t i = 0; i < 4; ++i) mem.balanced_update(filler[i], WritePolicy::BalancedSqrt, tracker);
        // Buffer holds four word-3 spans; offering a word-4 span makes the
        // sqrt target {3: 2/3, 4: 1/3} and a swap strictly decreases KL.
        mem.balanced_update(filler[4], WritePolicy::BalancedSqrt, tracker);
        CHECK(mem.word_counts_memory().at(4) == 1);
        CHECK(mem.word_counts_memory().at(3) == 3);

        auto target = mem.target_distribution(WritePolicy::BalancedSqrt, tracker);
        CHECK(target.at(3) == doctest::Approx(2.0 / 3.0));
        // Smoothed KL of the committed buffer {3:3, 4:1} versus the rejected
        // all-3 buffer {3:4}, both against the same target.
        auto kl = [&](double c3, double c4) {
            double denom = (0.5 + c3) + (0.5 + c4);
            double p3 = (0.5 + c3) / denom, p4 = (0.5 + c4) / denom;
            return p3 * std::log(p3 / target.at(3)) + p4 * std::log(p4 / target.at(4));
        };
        CHECK(mem.memory_kl(target) == doctest::Approx(kl(3, 1)).epsilon(1e-12));
        CHECK(kl(3, 1) < kl(4, 0));
    }
    SUBCASE("an incoming example that would unbalance a matched buffer is discarded") {
        ReplayMemory mem(2);
        auto items = word_instances({{3}, {4}, {3}});
        mem.balanced_update(items[0], WritePolicy::BalancedSqrt, tracker);
        mem.balanced_update(items[1], WritePolicy::BalancedSqrt, tracker);
        // Buffer {3,4} matches the uniform target; another 3 cannot help.
        auto before = mem.word_counts_memory();
        mem.balanced_update(items[2], WritePolicy::BalancedSqrt, tracker);
        CHECK(mem.word_counts_memory() == before);
        CHECK(mem.seen_count() == 3);
    }
}

TEST_CASE("balanced-forget weights words by stream frequency times tracker estimate") {
    ReplayMemory mem(8);
    Rng rng(8);
    auto items = word_instances({{3}, {3}, {4}});
    mem.reservoir_update(std::span<const Instance>(items), rng);
    ForgettingTracker tracker(0.5);
    tracker.update(3, 1.0);  // estimate 0.5
    // Word 4 has zero estimate: excluded from the target support.
    auto target = mem.target_distribution(WritePolicy::BalancedForget, tracker);
    REQUIRE(target.size() == 1);
    CHECK(target.at(3) == doctest::Approx(1.0));
}

TEST_CASE("tracker EMA fixtures") {
    SUBCASE("fresh word, delta 1.0, alpha 0.1") {
        ForgettingTracker tracker(0.1);
        tracker.update(7, 1.0);
        CHECK(tracker.estimate(7) == doctest::Approx(0.1));
    }
    SUBCASE("negative deltas clamp to zero and decay the estimate") {
        ForgettingTracker tracker(0.1);
        tracker.update(7, 1.0);
        tracker.update(7, -5.0);
        CHECK(tracker.estimate(7) == doctest::Approx(0.09));
        CHECK(tracker.estimate(7) >= 0.0);
    }
    SUBCASE("repeated delta d converges to d") {
        ForgettingTracker tracker(0.2);
        for (int i = 0; i < 200; ++i) tracker.update(3, 0.7);
        CHECK(tracker.estimate(3) == doctest::Approx(0.7).epsilon(1e-9));
    }
    SUBCASE("decay outside (0,1) is rejected") {
        CHECK_THROWS(ForgettingTracker(0.0));
        CHECK_THROWS(ForgettingTracker(1.0));
    }
}

TEST_CASE("memory dump writes the buffer and a sidecar") {
    SyntheticSpec spec;
    spec.nouns = 2;
    spec.adjectives = 1;
    spec.verbs = 0;
    spec.train_per_composition = 5;
    spec.val_per_composition = 0;
    spec.test_per_composition = 0;
    auto corpus = generate_synthetic_corpus(spec, 12);
    ReplayMemory mem(4);
    Rng rng(4);
    mem.reservoir_update(std::span<const Instance>(corpus.train), rng);
    auto dir = std::filesystem::temp_directory_path();
    auto jsonl = (dir / "driftbench_mem.jsonl").string();
    auto sidecar = (dir / "driftbench_mem.json").string();
    mem.dump(jsonl, sidecar, corpus.vocab);
    std::ifstream in(jsonl);
    int lines = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++lines;
    CHECK(lines == 4);
    std::ifstream side(sidecar);
    std::string text((std::istreambuf_iterator<char>(side)), std::istreambuf_iterator<char>());
    CHECK(text.find("seen_count") != std::string::npos);
    CHECK(text.find("word_counts_memory") != std::string::npos);
    std::filesystem::remove(jsonl);
    std::filesystem::remove(sidecar);
}
