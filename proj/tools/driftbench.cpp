#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "driftbench/experiment.hpp"
#include "driftbench/metrics.hpp"

namespace fs = std::filesystem;
using namespace driftbench;

namespace {

ExperimentConfig load_config(const std::string& path, const std::string& seed_override,
                             const std::string& out_override, const std::string& method_override,
                             const std::string& memory_override, int jobs_override) {
    ConfigTree tree = ConfigTree::parse_file(path);
    using Value = ConfigTree::Value;
    auto int_value = [](std::int64_t v) {
        Value value;
        value.kind = Value::Kind::Int;
        value.integer = v;
        return value;
    };
    auto string_value = [](const std::string& s) {
        Value value;
        value.kind = Value::Kind::String;
        value.str = s;
        return value;
    };
    if (!seed_override.empty()) {
        Value v;
        v.kind = Value::Kind::Array;
        v.array.push_back(int_value(std::stoll(seed_override)));
        tree.set_override("run.seeds", v);
    }
    if (!out_override.empty()) tree.set_override("run.out", string_value(out_override));
    if (!method_override.empty()) tree.set_override("trainer.method", string_value(method_override));
    if (!memory_override.empty())
        tree.set_override("trainer.memory", int_value(std::stoll(memory_override)));
    if (jobs_override > 0) tree.set_override("run.jobs", int_value(jobs_override));
    return parse_experiment_config(tree);
}

int cmd_gen_corpus(const std::string& config_path, const std::string& out_dir,
                   const std::string& seed_override) {
    ConfigTree tree = ConfigTree::parse_file(config_path);
    ExperimentConfig cfg = parse_experiment_config(tree);
    if (!cfg.synthetic) {
        std::cerr << "gen-corpus needs corpus.source = \"synthetic\"\n";
        return 2;
    }
    if (!seed_override.empty()) cfg.corpus_seed = std::stoull(seed_override);

    auto corpus = generate_synthetic_corpus(cfg.spec, cfg.corpus_seed);
    std::vector<CompositionPair> held_out;
    if (!cfg.held_out_file.empty())
        held_out = load_held_out_pairs(cfg.held_out_file);
    else if (cfg.held_out_count > 0)
        held_out = default_held_out_pairs(corpus, cfg.held_out_count);
    Lemmatizer lemmatizer;
    auto split = build_compositional_split(std::move(corpus.train), std::move(corpus.val),
                                           std::move(corpus.test), held_out, corpus.vocab, lemmatizer);
    for (const auto& warning : split.warnings) std::cerr << "warning: " << warning << "\n";

    fs::create_directories(out_dir);
    write_jsonl((fs::path(out_dir) / "train.jsonl").string(), split.train, corpus.vocab);
    write_jsonl((fs::path(out_dir) / "val.jsonl").string(), split.val, corpus.vocab);
    write_jsonl((fs::path(out_dir) / "test.jsonl").string(), split.test, corpus.vocab);
    write_jsonl((fs::path(out_dir) / "compositional_test.jsonl").string(), split.compositional_test,
                corpus.vocab);
    write_held_out_pairs((fs::path(out_dir) / "held_out.tsv").string(), held_out);
    std::cout << "wrote " << split.train.size() << " train / " << split.val.size() << " val / "
              << split.test.size() << " test / " << split.compositional_test.size()
              << " compositional-test instances to " << out_dir << "\n";
    return 0;
}

int cmd_build_stream(const std::string& config_path, const std::string& out_dir) {
    ConfigTree tree = ConfigTree::parse_file(config_path);
    ExperimentConfig cfg = parse_experiment_config(tree);
    PreparedData data = prepare_data(cfg);
    fs::create_directories(out_dir);
    write_schedule_csv((fs::path(out_dir) / "schedule.csv").string(), data.schedule);
    write_stream_csv((fs::path(out_dir) / "stream.csv").string(), data.stream);
    std::cout << "stream of " << data.stream.instances.size() << " instances over "
              << data.schedule.order.size() << " tasks -> " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"drift-bench: task-free continual learning on non-stationary caption streams"};
    app.require_subcommand(1);

    std::string config_path, out_dir, seed, method, memory;
    int jobs = 0;

    auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic corpus as JSONL splits");
    gen->add_option("--config", config_path, "experiment config file")->required();
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--seed", seed, "override corpus seed");

    auto* build = app.add_subcommand("build-stream", "Build the non-stationary stream and dump CSVs");
    build->add_option("--config", config_path, "experiment config file")->required();
    build->add_option("--out", out_dir, "output directory")->required();

    auto* run = app.add_subcommand("run", "Run an experiment over its configured seeds");
    run->add_option("--config", config_path, "experiment config file")->required();
    run->add_option("--seed", seed, "run a single seed instead of run.seeds");
    run->add_option("--out", out_dir, "override run.out");
    run->add_option("--method", method, "override trainer.method");
    run->add_option("--memory", memory, "override trainer.memory");
    run->add_option("--jobs", jobs, "override run.jobs (parallel seeds)");

    std::vector<std::string> run_dirs;
    std::string compare_out = "comparison";
    auto* compare = app.add_subcommand("compare", "Tabulate experiment directories");
    compare->add_option("dirs", run_dirs, "experiment directories")->required();
    compare->add_option("--out", compare_out, "output prefix for .csv/.json");

    auto* check = app.add_subcommand("check", "Run the runtime invariant suite");
    (void)check;

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_corpus(config_path, out_dir, seed);
        if (build->parsed()) return cmd_build_stream(config_path, out_dir);
        if (run->parsed()) {
            ExperimentConfig cfg = load_config(config_path, seed, out_dir, method, memory, jobs);
            run_experiment(cfg, std::cout);
            return 0;
        }
        if (compare->parsed()) {
            std::cout << compare_runs(run_dirs, compare_out);
            return 0;
        }
        if (check->parsed()) return self_check(std::cout) ? 0 : 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
