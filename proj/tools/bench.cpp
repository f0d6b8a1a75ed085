#include <chrono>
#include <cstdio>

#include "driftbench/experiment.hpp"
#include "driftbench/model.hpp"
#include "driftbench/synthetic.hpp"

using namespace driftbench;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename F>
double time_best_of(int reps, F&& fn) {
    double best = 1e30;
    for (int r = 0; r < reps; ++r) {
        auto t0 = Clock::now();
        fn();
        best = std::min(best, seconds_since(t0));
    }
    return best;
}

}  // namespace

int main() {
    SyntheticSpec spec;
    auto corpus = generate_synthetic_corpus(spec, 7);
    EncoderConfig enc;
    enc.vocab_size = corpus.vocab.size();
    enc.visual_dim = spec.visual_dim;
    enc.seed = 1;
    auto model = init_model<Real>(enc);

    std::printf("threads available: %d\n", exec_threads());
    std::printf("model: d=%d L=%d H=%d ffn=%d V=%d\n\n", enc.hidden, enc.layers, enc.heads,
                enc.ffn_hidden, enc.vocab_size);
    std::printf("%-28s %10s %10s %8s\n", "kernel", "serial(ms)", "openmp(ms)", "speedup");

    for (int batch_size : {8, 32, 64}) {
        auto batch = std::span<const Instance>(corpus.train.data(), static_cast<std::size_t>(batch_size));
        ParamSet<Real> grads(enc);

        double serial = time_best_of(5, [&] { loss_and_grad(model, batch, false, Exec::Serial, grads); });
        double openmp = time_best_of(5, [&] { loss_and_grad(model, batch, false, Exec::Parallel, grads); });
        std::printf("%-22s B=%-4d %10.2f %10.2f %7.2fx\n", "loss_and_grad", batch_size, serial * 1e3,
                    openmp * 1e3, serial / openmp);

        serial = time_best_of(5, [&] { forward_batch(model, batch, false, Exec::Serial); });
        openmp = time_best_of(5, [&] { forward_batch(model, batch, false, Exec::Parallel); });
        std::printf("%-22s B=%-4d %10.2f %10.2f %7.2fx\n", "forward_batch", batch_size, serial * 1e3,
                    openmp * 1e3, serial / openmp);
    }

    // One optimizer step over a full combined batch, the training hot path.
    {
        auto batch = std::span<const Instance>(corpus.train.data(), 64);
        ParamSet<Real> grads(enc);
        auto step = [&](Exec exec) {
            loss_and_grad(model, batch, false, exec, grads);
            auto clone = model;
            optimizer_step(clone, grads);
        };
        double serial = time_best_of(5, [&] { step(Exec::Serial); });
        double openmp = time_best_of(5, [&] { step(Exec::Parallel); });
        std::printf("%-22s B=64   %10.2f %10.2f %7.2fx\n", "train_step", serial * 1e3, openmp * 1e3,
                    serial / openmp);
    }
    return 0;
}
