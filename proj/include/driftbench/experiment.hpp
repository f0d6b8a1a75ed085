#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "driftbench/config.hpp"
#include "driftbench/corpus_io.hpp"
#include "driftbench/model.hpp"
#include "driftbench/stream.hpp"
#include "driftbench/synthetic.hpp"
#include "driftbench/trainers.hpp"

namespace driftbench {

// Production scalar type; tests instantiate the templated core with double
// where extra precision matters.
using Real = float;

struct ExperimentConfig {
    // corpus
    bool synthetic = true;
    SyntheticSpec spec;
    std::uint64_t corpus_seed = 7;
    std::string train_jsonl, val_jsonl, test_jsonl;
    std::string synonyms_path;
    std::string held_out_file;
    int held_out_count = 8;
    // stream
    OrderPolicy order_policy = OrderPolicy::Random;
    std::uint64_t stream_seed = 42;
    int batch_size = 32;
    // model + trainer
    EncoderConfig encoder;
    TrainerConfig trainer;
    // run
    std::string out_dir = "runs";
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    int jobs = 1;
    bool parallel_kernels = true;

    std::string canonical_text;  // parsed tree dump; input of the run hash
};

ExperimentConfig parse_experiment_config(const ConfigTree& tree);

struct PreparedData {
    Vocabulary vocab;
    SplitResult split;
    std::vector<CompositionPair> held_out;
    TaskSchedule schedule;
    Stream stream;
    int visual_dim = 0;
};

PreparedData prepare_data(const ExperimentConfig& cfg);

struct SeedSummary {
    std::uint64_t seed = 0;
    std::string run_dir;
    std::int64_t steps = 0;
    double final_log_ppl = 0.0;
    double bleu1 = 0.0;
    double bleu2 = 0.0;
    double f_avg = 0.0;
};

// Runs every configured seed and writes per-seed artifacts plus an aggregate
// summary. Returns the experiment directory.
std::string run_experiment(const ExperimentConfig& cfg, std::ostream& log);

// Comparison table across experiment directories sharing corpus + stream.
// Writes <out_prefix>.csv and <out_prefix>.json; returns the CSV text.
std::string compare_runs(const std::vector<std::string>& experiment_dirs,
                         const std::string& out_prefix);

// Fast runtime invariant suite behind the `check` subcommand.
bool self_check(std::ostream& out);

std::string experiment_hash(const ExperimentConfig& cfg);

}  // namespace driftbench
