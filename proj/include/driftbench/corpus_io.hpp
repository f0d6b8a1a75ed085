#pragma once

#include <optional>
#include <string>
#include <vector>

#include "driftbench/chunker.hpp"
#include "driftbench/instance.hpp"
#include "driftbench/vocab.hpp"

namespace driftbench {

struct IngestOptions {
    int visual_dim = 32;
    int max_objects = 8;
    int max_text_len = 24;
    // When true, unseen tokens grow the vocabulary; otherwise they map to UNK.
    bool extend_vocab = false;
    const SynonymTable* synonyms = nullptr;
};

// One instance per JSONL line:
//   {"image_feature": [...], "object_features": [[...]...], "tokens": [...],
//    "pos": [...], "mask_span": [s, e], "task_id": "dog"}
// task_id is derived from the span when absent. Throws ParseError with the
// offending line number, or DimensionMismatch on feature-shape violations.
std::vector<Instance> ingest_jsonl(const std::string& path, Vocabulary& vocab,
                                   const IngestOptions& options);

// Inverse of ingest_jsonl: original tokens are restored from label_tokens.
void write_jsonl(const std::string& path, const std::vector<Instance>& instances,
                 const Vocabulary& vocab);

// Two-column TSV: noun<TAB>category.
SynonymTable load_synonym_table(const std::string& path);

// Three-column TSV: modifier<TAB>noun<TAB>kind.
std::vector<CompositionPair> load_held_out_pairs(const std::string& path);
void write_held_out_pairs(const std::string& path, const std::vector<CompositionPair>& pairs);

}  // namespace driftbench
