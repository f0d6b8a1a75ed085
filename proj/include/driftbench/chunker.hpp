#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "driftbench/instance.hpp"

namespace driftbench {

// Noun-phrase chunks over PTB tags: an optional determiner, any number of
// JJ/VBG/VBN modifiers, one or more NN/NNS, then any trailing
// VB/VBD/VBG/VBN/VBP/VBZ. Matches are leftmost-longest and non-overlapping;
// scanning resumes after each match.
std::vector<std::pair<int, int>> chunk_caption(std::span<const TaggedToken> tagged);

// Plural -> singular by suffix rules plus an exception table. Deliberately a
// lookup, not a morphological analyzer.
class Lemmatizer {
public:
    Lemmatizer();

    // TSV lines: plural<TAB>singular. Later entries win.
    void load_exceptions(const std::string& path);
    void add_exception(const std::string& plural, const std::string& singular);

    std::string lemma(const std::string& word) const;

private:
    std::map<std::string, std::string> exceptions_;
};

// Base form of an inflected verb/participle (running -> run, eats -> eat).
// Suffix rules only; used when matching held-out composition modifiers.
std::string verb_stem(const std::string& word);

using SynonymTable = std::map<std::string, std::string>;

// Task id of a masked span: the lemmatized head noun (rightmost NN/NNS),
// mapped through the synonym table when one is given. Throws NoNounInSpan.
std::string derive_task_id(std::span<const TaggedToken> span,
                           const Lemmatizer& lemmatizer,
                           const SynonymTable* synonyms = nullptr);

}  // namespace driftbench
