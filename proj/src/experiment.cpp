#include "driftbench/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <thread>

#include <nlohmann/json.hpp>

#include "driftbench/checkpoint.hpp"
#include "driftbench/metrics.hpp"

namespace driftbench {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

OrderPolicy order_policy_from_string(const std::string& name) {
    if (name == "random") return OrderPolicy::Random;
    if (name == "asc_size") return OrderPolicy::AscSize;
    if (name == "desc_size") return OrderPolicy::DescSize;
    throw ConfigError("unknown stream order '" + name + "'; valid: random, asc_size, desc_size");
}

WritePolicy write_policy_from_string(const std::string& name) {
    if (name == "reservoir") return WritePolicy::Reservoir;
    if (name == "balanced_sqrt") return WritePolicy::BalancedSqrt;
    if (name == "balanced_forget") return WritePolicy::BalancedForget;
    throw ConfigError("unknown write policy '" + name +
                      "'; valid: reservoir, balanced_sqrt, balanced_forget");
}

std::string hex16(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

ExperimentConfig parse_experiment_config(const ConfigTree& tree) {
    ExperimentConfig cfg;
    cfg.canonical_text = tree.canonical();

    std::string source = tree.get_string("corpus.source", "synthetic");
    if (source == "synthetic") {
        cfg.synthetic = true;
        cfg.spec.nouns = static_cast<int>(tree.get_int("corpus.nouns", cfg.spec.nouns));
        cfg.spec.adjectives = static_cast<int>(tree.get_int("corpus.adjectives", cfg.spec.adjectives));
        cfg.spec.verbs = static_cast<int>(tree.get_int("corpus.verbs", cfg.spec.verbs));
        cfg.spec.modifiers_per_noun =
            static_cast<int>(tree.get_int("corpus.modifiers_per_noun", cfg.spec.modifiers_per_noun));
        cfg.spec.train_per_composition = static_cast<int>(
            tree.get_int("corpus.train_per_composition", cfg.spec.train_per_composition));
        cfg.spec.val_per_composition =
            static_cast<int>(tree.get_int("corpus.val_per_composition", cfg.spec.val_per_composition));
        cfg.spec.test_per_composition =
            static_cast<int>(tree.get_int("corpus.test_per_composition", cfg.spec.test_per_composition));
        cfg.spec.noise_sigma = tree.get_double("corpus.noise_sigma", cfg.spec.noise_sigma);
        cfg.spec.composition_coupling =
            tree.get_double("corpus.composition_coupling", cfg.spec.composition_coupling);
        cfg.spec.visual_dim = static_cast<int>(tree.get_int("corpus.visual_dim", cfg.spec.visual_dim));
        cfg.spec.max_objects = static_cast<int>(tree.get_int("corpus.max_objects", cfg.spec.max_objects));
        cfg.held_out_count = static_cast<int>(tree.get_int("corpus.held_out_pairs", cfg.held_out_count));
    } else if (source == "jsonl") {
        cfg.synthetic = false;
        cfg.train_jsonl = tree.get_string("corpus.train");
        cfg.val_jsonl = tree.get_string("corpus.val", "");
        cfg.test_jsonl = tree.get_string("corpus.test");
        cfg.synonyms_path = tree.get_string("corpus.synonyms", "");
        cfg.spec.visual_dim = static_cast<int>(tree.get_int("corpus.visual_dim", cfg.spec.visual_dim));
    } else {
        throw ConfigError("corpus.source must be 'synthetic' or 'jsonl'");
    }
    cfg.corpus_seed = static_cast<std::uint64_t>(tree.get_int("corpus.seed", 7));
    cfg.held_out_file = tree.get_string("corpus.held_out_file", "");

    cfg.stream_seed = static_cast<std::uint64_t>(tree.get_int("stream.seed", 42));
    cfg.order_policy = order_policy_from_string(tree.get_string("stream.order", "random"));
    cfg.batch_size = static_cast<int>(tree.get_int("stream.batch_size", 32));
    if (cfg.batch_size < 1) throw ConfigError("stream.batch_size must be >= 1");

    cfg.encoder.hidden = static_cast<int>(tree.get_int("model.hidden", cfg.encoder.hidden));
    cfg.encoder.layers = static_cast<int>(tree.get_int("model.layers", cfg.encoder.layers));
    cfg.encoder.heads = static_cast<int>(tree.get_int("model.heads", cfg.encoder.heads));
    cfg.encoder.ffn_hidden = static_cast<int>(tree.get_int("model.ffn_hidden", cfg.encoder.ffn_hidden));
    cfg.encoder.max_objects = static_cast<int>(tree.get_int("model.max_objects", cfg.encoder.max_objects));
    cfg.encoder.max_text_len =
        static_cast<int>(tree.get_int("model.max_text_len", cfg.encoder.max_text_len));
    cfg.encoder.lr = tree.get_double("model.lr", cfg.encoder.lr);
    cfg.encoder.weight_decay = tree.get_double("model.weight_decay", cfg.encoder.weight_decay);
    cfg.encoder.beta1 = tree.get_double("model.beta1", cfg.encoder.beta1);
    cfg.encoder.beta2 = tree.get_double("model.beta2", cfg.encoder.beta2);
    cfg.encoder.adam_eps = tree.get_double("model.adam_eps", cfg.encoder.adam_eps);
    cfg.encoder.init_std = tree.get_double("model.init_std", cfg.encoder.init_std);
    cfg.encoder.visual_dim = cfg.spec.visual_dim;
    if (cfg.synthetic && cfg.spec.max_objects > cfg.encoder.max_objects)
        throw ConfigError("corpus.max_objects exceeds model.max_objects");

    cfg.trainer.method = method_from_string(tree.get_string("trainer.method", "vanilla"));
    cfg.trainer.memory_capacity = static_cast<std::size_t>(tree.get_int("trainer.memory", 0));
    cfg.trainer.replay_size = static_cast<int>(tree.get_int("trainer.replay_size", 0));
    cfg.trainer.agem_ref_size = static_cast<int>(tree.get_int("trainer.agem_ref_size", 64));
    cfg.trainer.mir_candidates = static_cast<int>(tree.get_int("trainer.mir_candidates", 64));
    cfg.trainer.epochs = static_cast<int>(tree.get_int("trainer.epochs", 1));
    cfg.trainer.eval_interval = tree.get_int("trainer.eval_interval", 50);
    cfg.trainer.zero_visual = tree.get_bool("trainer.zero_visual", false);
    cfg.trainer.write_policy =
        write_policy_from_string(tree.get_string("trainer.write_policy", "reservoir"));

    cfg.out_dir = tree.get_string("run.out", "runs");
    auto seeds = tree.get_int_array("run.seeds", {1, 2, 3});
    cfg.seeds.clear();
    for (auto s : seeds) cfg.seeds.push_back(static_cast<std::uint64_t>(s));
    if (cfg.seeds.empty()) throw ConfigError("run.seeds must not be empty");
    cfg.jobs = static_cast<int>(tree.get_int("run.jobs", 1));
    if (cfg.jobs < 1) throw ConfigError("run.jobs must be >= 1");
    cfg.parallel_kernels = tree.get_bool("run.parallel", true);

    tree.reject_unknown_keys();
    cfg.trainer.validate(cfg.batch_size);
    return cfg;
}

PreparedData prepare_data(const ExperimentConfig& cfg) {
    PreparedData data;
    Lemmatizer lemmatizer;
    std::vector<Instance> train, val, test;
    if (cfg.synthetic) {
        auto corpus = generate_synthetic_corpus(cfg.spec, cfg.corpus_seed);
        data.vocab = corpus.vocab;
        data.visual_dim = cfg.spec.visual_dim;
        if (!cfg.held_out_file.empty())
            data.held_out = load_held_out_pairs(cfg.held_out_file);
        else if (cfg.held_out_count > 0)
            data.held_out = default_held_out_pairs(corpus, cfg.held_out_count);
        train = std::move(corpus.train);
        val = std::move(corpus.val);
        test = std::move(corpus.test);
    } else {
        SynonymTable synonyms;
        IngestOptions opts;
        opts.visual_dim = cfg.spec.visual_dim;
        opts.max_objects = cfg.encoder.max_objects;
        opts.max_text_len = cfg.encoder.max_text_len;
        if (!cfg.synonyms_path.empty()) {
            synonyms = load_synonym_table(cfg.synonyms_path);
            opts.synonyms = &synonyms;
        }
        opts.extend_vocab = true;
        train = ingest_jsonl(cfg.train_jsonl, data.vocab, opts);
        opts.extend_vocab = false;
        if (!cfg.val_jsonl.empty()) val = ingest_jsonl(cfg.val_jsonl, data.vocab, opts);
        test = ingest_jsonl(cfg.test_jsonl, data.vocab, opts);
        data.visual_dim = cfg.spec.visual_dim;
        if (!cfg.held_out_file.empty()) data.held_out = load_held_out_pairs(cfg.held_out_file);
    }
    data.split = build_compositional_split(std::move(train), std::move(val), std::move(test),
                                           data.held_out, data.vocab, lemmatizer);
    auto pools = pools_by_task(data.split.train);
    data.schedule = propose_schedule(pools, cfg.order_policy, cfg.stream_seed);
    data.stream = build_stream(data.schedule, pools, cfg.stream_seed, cfg.batch_size);
    return data;
}

std::string experiment_hash(const ExperimentConfig& cfg) {
    return hex16(fnv1a64(cfg.canonical_text));
}

namespace {

SeedSummary run_one_seed(const ExperimentConfig& cfg, const PreparedData& data, std::uint64_t seed,
                         const fs::path& exp_dir, Exec exec) {
    EncoderConfig enc = cfg.encoder;
    enc.vocab_size = data.vocab.size();
    enc.seed = seed;
    TrainerConfig tc = cfg.trainer;
    tc.seed = seed;

    auto model = init_model<Real>(enc);
    auto result = run_method(tc, std::move(model), data.stream,
                             std::span<const Instance>(data.split.test), exec);

    auto windows = task_windows_95(data.stream);
    auto forgetting = forgetting_metric(result.records, windows);
    Lemmatizer lemmatizer;
    auto composition = composition_report(result.model, std::span<const Instance>(data.split.test),
                                          std::span<const Instance>(data.split.compositional_test),
                                          data.held_out, data.vocab, lemmatizer, tc.zero_visual, exec);

    fs::path run_dir = exp_dir / ("run-" + hex16(fnv1a64(cfg.canonical_text + "\nseed = " +
                                                         std::to_string(seed) + "\n")));
    fs::create_directories(run_dir);
    {
        std::ofstream out(run_dir / "config.toml");
        out << cfg.canonical_text << "seed = " << seed << "\n";
    }
    write_schedule_csv((run_dir / "schedule.csv").string(), data.schedule);
    write_stream_csv((run_dir / "stream.csv").string(), data.stream);
    write_checkpoint_csv((run_dir / "checkpoints.csv").string(), result.records);
    write_forgetting_json((run_dir / "forgetting.json").string(), forgetting);
    write_composition_json((run_dir / "composition.json").string(), composition);
    save_checkpoint((run_dir / "model.ckpt").string(), result.model);

    const auto& final_record = result.records.back();
    json summary;
    summary["seed"] = seed;
    summary["method"] = method_to_string(tc.method);
    summary["memory"] = tc.memory_capacity;
    summary["steps"] = result.steps;
    summary["final_log_ppl"] = final_record.overall_log_ppl;
    summary["bleu1"] = final_record.overall_bleu1;
    summary["bleu2"] = final_record.overall_bleu2;
    summary["f_avg"] = forgetting.f_avg;
    if (method_uses_memory(tc.method)) {
        result.memory.dump((run_dir / "memory.jsonl").string(), (run_dir / "memory.json").string(),
                           data.vocab);
        auto sqrt_target = result.memory.target_distribution(WritePolicy::BalancedSqrt, result.tracker);
        if (!sqrt_target.empty()) summary["memory_kl_sqrt"] = result.memory.memory_kl(sqrt_target);
    }
    {
        std::ofstream out(run_dir / "summary.json");
        out << summary.dump(2) << '\n';
    }

    SeedSummary s;
    s.seed = seed;
    s.run_dir = run_dir.string();
    s.steps = result.steps;
    s.final_log_ppl = final_record.overall_log_ppl;
    s.bleu1 = final_record.overall_bleu1;
    s.bleu2 = final_record.overall_bleu2;
    s.f_avg = forgetting.f_avg;
    return s;
}

json mean_stddev(const std::vector<double>& values) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    double stddev = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
    return json{{"mean", mean}, {"stddev", stddev}, {"values", values}};
}

}  // namespace

std::string run_experiment(const ExperimentConfig& cfg, std::ostream& log) {
    PreparedData data = prepare_data(cfg);
    fs::path exp_dir = fs::path(cfg.out_dir) / ("exp-" + experiment_hash(cfg));
    fs::create_directories(exp_dir);

    const Exec exec = (cfg.parallel_kernels && cfg.jobs == 1) ? Exec::Parallel : Exec::Serial;
    std::vector<SeedSummary> outcomes(cfg.seeds.size());
    std::size_t next = 0;
    while (next < cfg.seeds.size()) {
        std::size_t wave = std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs),
                                                 cfg.seeds.size() - next);
        std::vector<std::thread> workers;
        for (std::size_t w = 0; w < wave; ++w) {
            std::size_t idx = next + w;
            workers.emplace_back([&, idx]() {
                outcomes[idx] = run_one_seed(cfg, data, cfg.seeds[idx], exp_dir, exec);
            });
        }
        for (auto& t : workers) t.join();
        next += wave;
    }

    json summary;
    summary["config_hash"] = experiment_hash(cfg);
    summary["method"] = method_to_string(cfg.trainer.method);
    summary["memory"] = cfg.trainer.memory_capacity;
    summary["seeds"] = json::array();
    std::vector<double> ppl, b1, b2, favg;
    for (const auto& o : outcomes) {
        summary["seeds"].push_back(o.seed);
        ppl.push_back(o.final_log_ppl);
        b1.push_back(o.bleu1);
        b2.push_back(o.bleu2);
        favg.push_back(o.f_avg);
    }
    summary["final_log_ppl"] = mean_stddev(ppl);
    summary["bleu1"] = mean_stddev(b1);
    summary["bleu2"] = mean_stddev(b2);
    summary["f_avg"] = mean_stddev(favg);
    {
        std::ofstream out(exp_dir / "summary.json");
        out << summary.dump(2) << '\n';
    }
    {
        std::ofstream out(exp_dir / "config.toml");
        out << cfg.canonical_text;
    }
    for (const auto& o : outcomes)
        log << "seed " << o.seed << ": final_log_ppl=" << o.final_log_ppl << " bleu1=" << o.bleu1
            << " f_avg=" << o.f_avg << " (" << o.run_dir << ")\n";
    log << "experiment summary: " << (exp_dir / "summary.json").string() << "\n";
    return exp_dir.string();
}

std::string compare_runs(const std::vector<std::string>& experiment_dirs,
                         const std::string& out_prefix) {
    if (experiment_dirs.empty()) throw ConfigError("compare needs at least one experiment directory");
    struct Row {
        std::string method;
        std::int64_t memory;
        double ppl, b1, b2, favg;
    };
    std::vector<Row> rows;
    std::string reference_key;
    std::string reference_dir;
    for (const auto& dir : experiment_dirs) {
        std::ifstream cfg_in(fs::path(dir) / "config.toml");
        if (!cfg_in) throw ConfigError(dir + ": missing config.toml");
        std::string key, line;
        while (std::getline(cfg_in, line)) {
            if (line.rfind("corpus.", 0) == 0 || line.rfind("stream.", 0) == 0) key += line + "\n";
        }
        if (reference_key.empty()) {
            reference_key = key;
            reference_dir = dir;
        } else if (key != reference_key) {
            throw ConfigError("experiments use different corpus/stream settings: " + reference_dir +
                              " vs " + dir);
        }
        std::ifstream sum_in(fs::path(dir) / "summary.json");
        if (!sum_in) throw ConfigError(dir + ": missing summary.json");
        json summary = json::parse(sum_in);
        rows.push_back({summary.at("method").get<std::string>(),
                        summary.at("memory").get<std::int64_t>(),
                        summary.at("final_log_ppl").at("mean").get<double>(),
                        summary.at("bleu1").at("mean").get<double>(),
                        summary.at("bleu2").at("mean").get<double>(),
                        summary.at("f_avg").at("mean").get<double>()});
    }

    char buf[256];
    std::string csv = "method,memory,final_log_ppl,bleu1,bleu2,f_avg\n";
    json jrows = json::array();
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%lld,%.17g,%.17g,%.17g,%.17g\n", r.method.c_str(),
                      static_cast<long long>(r.memory), r.ppl, r.b1, r.b2, r.favg);
        csv += buf;
        jrows.push_back({{"method", r.method},
                         {"memory", r.memory},
                         {"final_log_ppl", r.ppl},
                         {"bleu1", r.b1},
                         {"bleu2", r.b2},
                         {"f_avg", r.favg}});
    }
    if (!out_prefix.empty()) {
        std::ofstream csv_out(out_prefix + ".csv");
        csv_out << csv;
        std::ofstream json_out(out_prefix + ".json");
        json_out << jrows.dump(2) << '\n';
    }
    return csv;
}

}  // namespace driftbench
