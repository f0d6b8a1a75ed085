#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "driftbench/chunker.hpp"
#include "driftbench/instance.hpp"
#include "driftbench/vocab.hpp"

namespace driftbench {

// Desk-scale compositional corpus: templated captions paired with symbolic
// scenes built from per-atom prototype vectors.
struct SyntheticSpec {
    int nouns = 20;
    int adjectives = 5;
    int verbs = 5;
    // Modifiers paired with each noun; 0 means all of them.
    int modifiers_per_noun = 0;
    int train_per_composition = 50;
    int val_per_composition = 2;
    int test_per_composition = 10;
    double noise_sigma = 0.1;
    // Weight of the per-pair interaction vector mixed into object features.
    // 0 makes scenes perfectly additive in the atom prototypes, which lets
    // models generalize to unseen pairs with no measurable penalty.
    double composition_coupling = 0.8;
    int visual_dim = 32;
    int max_objects = 3;

    int modifier_count() const { return adjectives + verbs; }
};

struct SyntheticCorpus {
    std::vector<Instance> train, val, test;
    Vocabulary vocab;
    std::vector<std::string> nouns;       // task ids, in atom order
    std::vector<std::string> adjectives;
    std::vector<std::string> verbs;
};

// Deterministic for a fixed seed. Throws SpecError on an infeasible spec.
SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed);

// A caption with shared visual features; one Instance per chunker match.
std::vector<Instance> expand_caption(const std::vector<TaggedToken>& caption,
                                     const std::vector<float>& image_feature,
                                     const std::vector<std::vector<float>>& object_features,
                                     Vocabulary& vocab,
                                     const Lemmatizer& lemmatizer,
                                     const SynonymTable* synonyms = nullptr);

struct SplitResult {
    std::vector<Instance> train, val, test;
    std::vector<Instance> compositional_test;
    std::vector<std::string> warnings;
};

// (modifier, head-noun-lemma) pairs present in an instance's masked span.
std::vector<CompositionPair> span_compositions(const Instance& inst,
                                               const Vocabulary& vocab,
                                               const Lemmatizer& lemmatizer);

// Surface-or-stem match of a span modifier against a held-out pair's atom.
bool modifier_matches_atom(const std::string& surface, const std::string& atom);

// Removes instances containing a held-out pair from train/val/test; the
// compositional test set is exactly the held-out instances of the test pool.
SplitResult build_compositional_split(std::vector<Instance> train,
                                      std::vector<Instance> val,
                                      std::vector<Instance> test,
                                      const std::vector<CompositionPair>& held_out,
                                      const Vocabulary& vocab,
                                      const Lemmatizer& lemmatizer);

// Default held-out pairs for a synthetic corpus: `count` pairs alternating
// between adjective and verb compositions, skewed so every atom keeps other
// partners in train.
std::vector<CompositionPair> default_held_out_pairs(const SyntheticCorpus& corpus, int count);

}  // namespace driftbench
