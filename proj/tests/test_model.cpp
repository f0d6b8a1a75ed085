#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "driftbench/checkpoint.hpp"
#include "driftbench/model.hpp"
#include "driftbench/rng.hpp"

using namespace driftbench;

namespace {

EncoderConfig small_config(int vocab) {
    EncoderConfig cfg;
    cfg.vocab_size = vocab;
    cfg.hidden = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ffn_hidden = 16;
    cfg.visual_dim = 5;
    cfg.max_objects = 3;
    cfg.max_text_len = 9;
    cfg.init_std = 0.15;
    cfg.seed = 29;
    return cfg;
}

Instance small_instance(Rng& rng, const EncoderConfig& cfg, int n_tokens, int span_begin,
                        int span_end, int n_objects) {
    Instance inst;
    inst.image_feature.resize(static_cast<std::size_t>(cfg.visual_dim));
    for (auto& v : inst.image_feature) v = static_cast<float>(rng.normal());
    for (int o = 0; o < n_objects; ++o) {
        std::vector<float> feat(static_cast<std::size_t>(cfg.visual_dim));
        for (auto& v : feat) v = static_cast<float>(rng.normal());
        inst.object_features.push_back(std::move(feat));
    }
    for (int i = 0; i < n_tokens; ++i)
        inst.tokens.push_back(
            static_cast<TokenId>(3 + rng.uniform_below(static_cast<std::uint64_t>(cfg.vocab_size - 3))));
    inst.pos.assign(static_cast<std::size_t>(n_tokens), "NN");
    inst.span_begin = span_begin;
    inst.span_end = span_end;
    for (int i = span_begin; i < span_end; ++i) {
        inst.label_tokens.push_back(inst.tokens[static_cast<std::size_t>(i)]);
        inst.tokens[static_cast<std::size_t>(i)] = Vocabulary::kMask;
    }
    inst.task_id = "t";
    return inst;
}

// Loss recomputed from forward probabilities only; the oracle path of the
// finite-difference check stays independent of backward_instance.
double forward_loss(const ModelState<double>& state, std::span<const Instance> batch) {
    auto probs = forward_batch(state, batch, false, Exec::Serial);
    double total = 0.0;
    std::int64_t count = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        for (std::size_t t = 0; t < batch[i].label_tokens.size(); ++t) {
            total += -std::log(probs[i].at(static_cast<int>(t), batch[i].label_tokens[t]));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences (V=11,d=8,L=1,H=2)") {
    auto cfg = small_config(11);
    auto state = init_model<double>(cfg);
    Rng rng(17);
    std::vector<Instance> batch = {small_instance(rng, cfg, 6, 1, 4, 2)};

    ParamSet<double> grads(cfg);
    loss_and_grad(state, std::span<const Instance>(batch), false, Exec::Serial, grads);

    const double h = 1e-4;
    double worst = 0.0;
    auto specs = param_specs(cfg);
    for (std::size_t ti = 0; ti < specs.size(); ++ti) {
        auto& data = state.params.tensors[ti].data;
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double saved = data[j];
            data[j] = saved + h;
            double up = forward_loss(state, std::span<const Instance>(batch));
            data[j] = saved - h;
            double down = forward_loss(state, std::span<const Instance>(batch));
            data[j] = saved;
            double numeric = (up - down) / (2.0 * h);
            double analytic = grads.tensors[ti].data[j];
            double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-6});
            worst = std::max(worst, rel);
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("softmax rows sum to one and fresh-model loss is ln V") {
    auto cfg = small_config(40);
    cfg.init_std = 0.02;
    auto state = init_model<double>(cfg);
    Rng rng(5);
    std::vector<Instance> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(small_instance(rng, cfg, 7, 2, 5, 1));

    auto probs = forward_batch(state, std::span<const Instance>(batch), false, Exec::Serial);
    for (const auto& rows : probs) {
        for (int r = 0; r < rows.rows; ++r) {
            double sum = 0.0;
            for (int v = 0; v < rows.cols; ++v) sum += rows.at(r, v);
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
    ParamSet<double> grads(cfg);
    double loss = loss_and_grad(state, std::span<const Instance>(batch), false, Exec::Serial, grads);
    CHECK(loss == doctest::Approx(std::log(40.0)).epsilon(0.03));
}

TEST_CASE("parallel and serial execution produce bitwise-identical results") {
    auto cfg = small_config(19);
    auto state = init_model<float>(cfg);
    Rng rng(23);
    std::vector<Instance> batch;
    for (int i = 0; i < 9; ++i) batch.push_back(small_instance(rng, cfg, 6, 1, 3, 2));

    ParamSet<float> g_serial(cfg), g_parallel(cfg);
    double l1 = loss_and_grad(state, std::span<const Instance>(batch), false, Exec::Serial, g_serial);
    double l2 = loss_and_grad(state, std::span<const Instance>(batch), false, Exec::Parallel, g_parallel);
    CHECK(l1 == l2);
    for (std::size_t t = 0; t < g_serial.tensors.size(); ++t)
        CHECK(std::memcmp(g_serial.tensors[t].data.data(), g_parallel.tensors[t].data.data(),
                          g_serial.tensors[t].data.size() * sizeof(float)) == 0);

    auto p_serial = forward_batch(state, std::span<const Instance>(batch), false, Exec::Serial);
    auto p_parallel = forward_batch(state, std::span<const Instance>(batch), false, Exec::Parallel);
    for (std::size_t i = 0; i < p_serial.size(); ++i)
        CHECK(std::memcmp(p_serial[i].data.data(), p_parallel[i].data.data(),
                          p_serial[i].data.size() * sizeof(float)) == 0);
}

TEST_CASE("zero_visual ignores visual content bitwise and differs from the multimodal pass") {
    auto cfg = small_config(13);
    auto state = init_model<float>(cfg);
    Rng rng(31);
    std::vector<Instance> batch = {small_instance(rng, cfg, 6, 0, 3, 2)};

    auto text_only = forward_batch(state, std::span<const Instance>(batch), true, Exec::Serial);
    auto multimodal = forward_batch(state, std::span<const Instance>(batch), false, Exec::Serial);

    std::vector<Instance> perturbed = batch;
    for (auto& v : perturbed[0].image_feature) v += 3.5f;
    for (auto& obj : perturbed[0].object_features)
        for (auto& v : obj) v -= 1.25f;
    auto text_only2 = forward_batch(state, std::span<const Instance>(perturbed), true, Exec::Serial);

    CHECK(std::memcmp(text_only[0].data.data(), text_only2[0].data.data(),
                      text_only[0].data.size() * sizeof(float)) == 0);
    bool any_diff = false;
    for (std::size_t i = 0; i < multimodal[0].data.size(); ++i)
        any_diff |= multimodal[0].data[i] != text_only[0].data[i];
    CHECK(any_diff);
}

TEST_CASE("adamw update rule fixtures") {
    auto cfg = small_config(11);
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    auto state = init_model<double>(cfg);

    SUBCASE("single unit gradient moves a unit parameter to ~0.9") {
        state.params.tensors[0].data[0] = 1.0;
        ParamSet<double> grads(cfg);
        grads.tensors[0].data[0] = 1.0;
        optimizer_step(state, grads);
        CHECK(state.params.tensors[0].data[0] ==
              doctest::Approx(1.0 - 0.1 * (1.0 / (1.0 + 1e-8))).epsilon(1e-9));
        CHECK(state.step == 1);
    }

    SUBCASE("zero gradient and zero decay leave parameters untouched") {
        auto before = state.params.tensors[0].data;
        ParamSet<double> grads(cfg);
        optimizer_step(state, grads);
        CHECK(state.step == 1);
        CHECK(state.params.tensors[0].data == before);
    }

    SUBCASE("pure decoupled decay scales parameters by 1 - lr*wd") {
        cfg.weight_decay = 0.01;
        auto decayed = init_model<double>(cfg);
        decayed.params.tensors[0].data[0] = 2.0;
        ParamSet<double> grads(cfg);
        optimizer_step(decayed, grads);
        CHECK(decayed.params.tensors[0].data[0] ==
              doctest::Approx(2.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-12));
    }

    SUBCASE("non-finite gradients are rejected") {
        ParamSet<double> grads(cfg);
        grads.tensors[2].data[1] = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS(optimizer_step(state, grads));
    }
}

TEST_CASE("decode_span argmax with lowest-id tie break") {
    Tensor<float> rows(3, 3);
    rows.at(0, 0) = 1.0f;  // one-hot on 0
    rows.at(1, 0) = 0.1f;
    rows.at(1, 1) = 0.7f;
    rows.at(1, 2) = 0.2f;
    float third = 1.0f / 3.0f;
    rows.at(2, 0) = third;
    rows.at(2, 1) = third;
    rows.at(2, 2) = third;
    auto decoded = decode_span(rows);
    CHECK(decoded == std::vector<TokenId>{0, 1, 0});
}

TEST_CASE("over-length inputs are rejected") {
    auto cfg = small_config(11);
    auto state = init_model<float>(cfg);
    Rng rng(3);
    auto too_long = small_instance(rng, cfg, cfg.max_text_len + 1, 0, 2, 1);
    std::vector<Instance> batch = {too_long};
    CHECK_THROWS_AS(forward_batch(state, std::span<const Instance>(batch), false, Exec::Serial),
                    DimensionMismatch);

    auto too_many = small_instance(rng, cfg, 4, 0, 2, cfg.max_objects + 1);
    batch = {too_many};
    CHECK_THROWS_AS(forward_batch(state, std::span<const Instance>(batch), false, Exec::Serial),
                    DimensionMismatch);
}

TEST_CASE("float checkpoints round-trip bitwise") {
    auto cfg = small_config(17);
    auto state = init_model<float>(cfg);
    Rng rng(41);
    std::vector<Instance> batch = {small_instance(rng, cfg, 5, 1, 3, 1)};
    ParamSet<float> grads(cfg);
    loss_and_grad(state, std::span<const Instance>(batch), false, Exec::Serial, grads);
    optimizer_step(state, grads);

    auto path = (std::filesystem::temp_directory_path() / "driftbench_ckpt_test.bin").string();
    save_checkpoint(path, state);
    auto restored = init_model<float>(cfg);
    load_checkpoint(path, restored);
    for (std::size_t t = 0; t < state.params.tensors.size(); ++t)
        CHECK(std::memcmp(state.params.tensors[t].data.data(), restored.params.tensors[t].data.data(),
                          state.params.tensors[t].data.size() * sizeof(float)) == 0);

    // Saving the restored state reproduces the file byte for byte.
    auto path2 = (std::filesystem::temp_directory_path() / "driftbench_ckpt_test2.bin").string();
    save_checkpoint(path2, restored);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    std::filesystem::remove(path);
    std::filesystem::remove(path2);

    auto wrong = small_config(18);
    auto other = init_model<float>(wrong);
    save_checkpoint(path, other);
    CHECK_THROWS(load_checkpoint(path, state));
    std::filesystem::remove(path);
}

TEST_CASE("training is deterministic across reruns and stays finite") {
    auto cfg = small_config(15);
    cfg.lr = 1e-3;
    Rng rng(7);
    std::vector<Instance> batch;
    for (int i = 0; i < 6; ++i) batch.push_back(small_instance(rng, cfg, 6, 2, 4, 1));

    auto run = [&]() {
        auto state = init_model<float>(cfg);
        ParamSet<float> grads(cfg);
        for (int s = 0; s < 20; ++s) {
            loss_and_grad(state, std::span<const Instance>(batch), false, Exec::Parallel, grads);
            optimizer_step(state, grads);
        }
        return state;
    };
    auto a = run();
    auto b = run();
    for (std::size_t t = 0; t < a.params.tensors.size(); ++t)
        CHECK(std::memcmp(a.params.tensors[t].data.data(), b.params.tensors[t].data.data(),
                          a.params.tensors[t].data.size() * sizeof(float)) == 0);
    CHECK(a.params.all_finite());
}
