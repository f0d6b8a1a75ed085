#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "driftbench/vocab.hpp"

namespace driftbench {

struct TaggedToken {
    std::string surface;
    std::string pos;  // Penn Treebank tag
};

// A held-out (modifier, noun) composition.
struct CompositionPair {
    std::string modifier;
    std::string noun;
    std::string kind;  // "noun-adj" | "noun-verb"
};

// One stream example. The masked span of `tokens` is already replaced with
// MASK ids; the original span lives in `label_tokens`. `task_id` shapes the
// stream only and is never shown to learners.
struct Instance {
    std::vector<float> image_feature;                 // [d_v]
    std::vector<std::vector<float>> object_features;  // [n_obj][d_v]
    std::vector<TokenId> tokens;
    std::vector<std::string> pos;  // PTB tag per token
    int span_begin = 0;
    int span_end = 0;
    std::vector<TokenId> label_tokens;
    std::string task_id;
    std::int64_t uid = -1;  // corpus-local identity, not serialized
};

struct NoNounInSpan : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SpecError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace driftbench
