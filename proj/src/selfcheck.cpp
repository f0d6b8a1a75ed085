#include <cmath>
#include <cstring>
#include <ostream>

#include "driftbench/experiment.hpp"
#include "driftbench/metrics.hpp"
#include "driftbench/replay.hpp"
#include "driftbench/rng.hpp"
#include "driftbench/stream.hpp"
#include "driftbench/synthetic.hpp"
#include "driftbench/trainers.hpp"

namespace driftbench {

namespace {

bool report(std::ostream& out, const char* name, bool ok) {
    out << (ok ? "[PASS] " : "[FAIL] ") << name << "\n";
    return ok;
}

bool check_chunker() {
    std::vector<TaggedToken> a = {{"a", "DT"}, {"brown", "JJ"}, {"dog", "NN"}, {"running", "VBG"}};
    std::vector<TaggedToken> b = {{"quickly", "RB"}, {"ran", "VBD"}};
    std::vector<TaggedToken> c = {
        {"the", "DT"}, {"man", "NN"}, {"eats", "VBZ"}, {"an", "DT"}, {"apple", "NN"}};
    auto ca = chunk_caption(a);
    auto cb = chunk_caption(b);
    auto cc = chunk_caption(c);
    return ca == std::vector<std::pair<int, int>>{{0, 4}} && cb.empty() &&
           cc == std::vector<std::pair<int, int>>{{0, 3}, {3, 5}};
}

bool check_metrics() {
    Tensor<double> uniform(1, 100);
    for (int v = 0; v < 100; ++v) uniform.at(0, v) = 0.01;
    std::vector<TokenId> label = {7};
    if (std::abs(log_perplexity(uniform, label) - std::log(100.0)) > 1e-9) return false;

    std::vector<TokenId> x = {3, 4, 5};
    if (std::abs(bleu_n(x, x, 1) - 1.0) > 1e-12) return false;
    std::vector<TokenId> hyp = {1, 2, 3}, ref = {1, 3};
    if (std::abs(bleu_n(hyp, ref, 1) - 2.0 / 3.0) > 1e-9) return false;

    Tensor<double> rows(2, 2);
    rows.at(0, 0) = 0.5;
    rows.at(0, 1) = 0.5;
    rows.at(1, 0) = 0.25;
    rows.at(1, 1) = 0.75;
    std::vector<TokenId> labels = {0, 0};
    return std::abs(log_perplexity(rows, labels) - 1.0397207708399179) < 1e-4;
}

bool check_agem() {
    EncoderConfig cfg;
    cfg.vocab_size = 7;
    cfg.hidden = 4;
    cfg.layers = 1;
    cfg.heads = 1;
    cfg.ffn_hidden = 8;
    cfg.visual_dim = 3;
    Rng rng(52);
    for (int trial = 0; trial < 1000; ++trial) {
        ParamSet<double> g(cfg), ref(cfg);
        for (auto& t : g.tensors)
            for (auto& v : t.data) v = rng.normal();
        for (auto& t : ref.tensors)
            for (auto& v : t.data) v = rng.normal();
        ParamSet<double> projected = g;
        agem_project(projected, ref);
        double before = param_dot(g, ref);
        double after = param_dot(projected, ref);
        if (after < -1e-9) return false;
        if (before >= 0.0 &&
            std::memcmp(projected.tensors[0].data.data(), g.tensors[0].data.data(),
                        g.tensors[0].data.size() * sizeof(double)) != 0)
            return false;
    }
    return true;
}

bool check_reservoir() {
    int kept_first = 0;
    const int trials = 20000;
    Rng rng(9);
    SyntheticSpec spec;
    spec.nouns = 1;
    spec.adjectives = 1;
    spec.verbs = 0;
    spec.train_per_composition = 2;
    spec.val_per_composition = 0;
    spec.test_per_composition = 0;
    auto corpus = generate_synthetic_corpus(spec, 3);
    for (int t = 0; t < trials; ++t) {
        ReplayMemory mem(1);
        mem.reservoir_update(std::span<const Instance>(corpus.train), rng);
        if (mem.buffer()[0].uid == corpus.train[0].uid) ++kept_first;
    }
    double freq = static_cast<double>(kept_first) / trials;
    return std::abs(freq - 0.5) < 0.015;
}

bool check_stream() {
    SyntheticSpec spec;
    spec.nouns = 4;
    spec.adjectives = 2;
    spec.verbs = 2;
    spec.train_per_composition = 25;
    spec.val_per_composition = 0;
    spec.test_per_composition = 0;
    auto corpus = generate_synthetic_corpus(spec, 11);
    auto pools = pools_by_task(corpus.train);
    auto schedule = propose_schedule(pools, OrderPolicy::Random, 5);
    auto stream = build_stream(schedule, pools, 5, 10);
    if (static_cast<std::int64_t>(stream.instances.size()) != schedule.total) return false;
    std::vector<std::int64_t> uids;
    for (const auto& inst : stream.instances) uids.push_back(inst.uid);
    std::sort(uids.begin(), uids.end());
    for (std::size_t i = 0; i < uids.size(); ++i)
        if (uids[i] != static_cast<std::int64_t>(i)) return false;
    auto again = build_stream(schedule, pools, 5, 10);
    for (std::size_t i = 0; i < uids.size(); ++i)
        if (stream.instances[i].uid != again.instances[i].uid) return false;
    return true;
}

bool check_balanced() {
    SyntheticSpec spec;
    spec.nouns = 3;
    spec.adjectives = 2;
    spec.verbs = 0;
    spec.train_per_composition = 30;
    spec.val_per_composition = 0;
    spec.test_per_composition = 0;
    auto corpus = generate_synthetic_corpus(spec, 21);
    ReplayMemory mem(10);
    ForgettingTracker tracker;
    for (const auto& inst : corpus.train)
        mem.balanced_update(inst, WritePolicy::BalancedSqrt, tracker);  // throws on a KL increase
    return mem.size() == 10;
}

bool check_model_determinism() {
    SyntheticSpec spec;
    spec.nouns = 2;
    spec.adjectives = 2;
    spec.verbs = 0;
    spec.train_per_composition = 16;
    spec.val_per_composition = 0;
    spec.test_per_composition = 2;
    auto corpus = generate_synthetic_corpus(spec, 13);
    EncoderConfig enc;
    enc.vocab_size = corpus.vocab.size();
    enc.hidden = 16;
    enc.layers = 1;
    enc.heads = 2;
    enc.ffn_hidden = 32;
    enc.visual_dim = spec.visual_dim;
    enc.seed = 3;

    auto run_once = [&]() {
        auto model = init_model<Real>(enc);
        ParamSet<Real> grads(enc);
        auto batch = std::span<const Instance>(corpus.train.data(), 8);
        for (int step = 0; step < 5; ++step) {
            loss_and_grad(model, batch, false, Exec::Parallel, grads);
            optimizer_step(model, grads);
        }
        return model;
    };
    auto m1 = run_once();
    auto m2 = run_once();
    for (std::size_t i = 0; i < m1.params.tensors.size(); ++i) {
        if (std::memcmp(m1.params.tensors[i].data.data(), m2.params.tensors[i].data.data(),
                        m1.params.tensors[i].data.size() * sizeof(Real)) != 0)
            return false;
    }
    auto probs = forward_batch(m1, std::span<const Instance>(corpus.test.data(), 1), false, Exec::Serial);
    double sum = 0.0;
    for (int v = 0; v < probs[0].cols; ++v) sum += static_cast<double>(probs[0].at(0, v));
    return std::abs(sum - 1.0) < 1e-6;
}

}  // namespace

bool self_check(std::ostream& out) {
    bool ok = true;
    ok &= report(out, "chunker spec examples", check_chunker());
    ok &= report(out, "metric fixtures (log-PPL, BLEU)", check_metrics());
    ok &= report(out, "agem projection identities (1000 pairs)", check_agem());
    ok &= report(out, "reservoir retention 0.5 +/- 0.015 (M=1, 20k trials)", check_reservoir());
    ok &= report(out, "stream conservation and determinism", check_stream());
    ok &= report(out, "balanced-sqrt KL never increases", check_balanced());
    ok &= report(out, "training determinism and softmax normalization", check_model_determinism());
    out << (ok ? "self-check passed\n" : "self-check FAILED\n");
    return ok;
}

}  // namespace driftbench
