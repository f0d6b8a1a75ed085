#include "driftbench/chunker.hpp"

#include <fstream>
#include <sstream>

namespace driftbench {

namespace {

bool is_modifier_tag(const std::string& t) {
    return t == "JJ" || t == "VBG" || t == "VBN";
}

bool is_noun_tag(const std::string& t) {
    return t == "NN" || t == "NNS";
}

bool is_trailing_verb_tag(const std::string& t) {
    return t == "VB" || t == "VBD" || t == "VBG" || t == "VBN" || t == "VBP" || t == "VBZ";
}

}  // namespace

std::vector<std::pair<int, int>> chunk_caption(std::span<const TaggedToken> tagged) {
    std::vector<std::pair<int, int>> chunks;
    const int n = static_cast<int>(tagged.size());
    int i = 0;
    while (i < n) {
        int p = i;
        if (p < n && tagged[p].pos == "DT") ++p;
        while (p < n && is_modifier_tag(tagged[p].pos)) ++p;
        int noun_start = p;
        while (p < n && is_noun_tag(tagged[p].pos)) ++p;
        if (p == noun_start) {
            ++i;  // no noun here; this start cannot match
            continue;
        }
        while (p < n && is_trailing_verb_tag(tagged[p].pos)) ++p;
        chunks.emplace_back(i, p);
        i = p;
    }
    return chunks;
}

Lemmatizer::Lemmatizer() {
    static const std::pair<const char*, const char*> kIrregular[] = {
        {"men", "man"},       {"women", "woman"},   {"children", "child"},
        {"people", "person"}, {"feet", "foot"},     {"teeth", "tooth"},
        {"mice", "mouse"},    {"geese", "goose"},   {"sheep", "sheep"},
        {"knives", "knife"},  {"wolves", "wolf"},   {"leaves", "leaf"},
        {"wives", "wife"},    {"lives", "life"},    {"shelves", "shelf"},
        {"buses", "bus"},     {"glasses", "glass"}, {"dishes", "dish"},
        {"bus", "bus"},       {"gas", "gas"},       {"lens", "lens"},
        {"tennis", "tennis"}, {"grass", "grass"},
    };
    for (const auto& [p, s] : kIrregular) exceptions_.emplace(p, s);
}

void Lemmatizer::add_exception(const std::string& plural, const std::string& singular) {
    exceptions_[plural] = singular;
}

void Lemmatizer::load_exceptions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open lemma exceptions file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError(path + ": line " + std::to_string(lineno) + ": expected plural<TAB>singular");
        add_exception(line.substr(0, tab), line.substr(tab + 1));
    }
}

namespace {

std::string lowercase(std::string s) {
    for (char& c : s)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return s;
}

bool ends_with(const std::string& s, const char* suffix) {
    std::string_view sv(suffix);
    return s.size() >= sv.size() && s.compare(s.size() - sv.size(), sv.size(), sv) == 0;
}

}  // namespace

std::string Lemmatizer::lemma(const std::string& word) const {
    std::string w = lowercase(word);
    auto it = exceptions_.find(w);
    if (it != exceptions_.end()) return it->second;
    if (w.size() > 3 && ends_with(w, "ies")) return w.substr(0, w.size() - 3) + "y";
    if (w.size() > 3 && (ends_with(w, "xes") || ends_with(w, "ches") || ends_with(w, "shes") ||
                         ends_with(w, "zes") || ends_with(w, "sses")))
        return w.substr(0, w.size() - 2);
    if (w.size() > 2 && ends_with(w, "s") && !ends_with(w, "ss")) return w.substr(0, w.size() - 1);
    return w;
}

std::string verb_stem(const std::string& word) {
    std::string w = lowercase(word);
    auto dedouble = [](std::string s) {
        if (s.size() >= 2 && s[s.size() - 1] == s[s.size() - 2]) s.pop_back();
        return s;
    };
    if (w.size() > 4 && ends_with(w, "ing")) return dedouble(w.substr(0, w.size() - 3));
    if (w.size() > 3 && ends_with(w, "ed")) return dedouble(w.substr(0, w.size() - 2));
    if (w.size() > 3 && ends_with(w, "es")) return w.substr(0, w.size() - 2);
    if (w.size() > 2 && ends_with(w, "s") && !ends_with(w, "ss")) return w.substr(0, w.size() - 1);
    return w;
}

std::string derive_task_id(std::span<const TaggedToken> span,
                           const Lemmatizer& lemmatizer,
                           const SynonymTable* synonyms) {
    int head = -1;
    for (int i = 0; i < static_cast<int>(span.size()); ++i) {
        if (is_noun_tag(span[i].pos)) head = i;
    }
    if (head < 0) throw NoNounInSpan("no noun in masked span");
    std::string lemma = lemmatizer.lemma(span[static_cast<std::size_t>(head)].surface);
    if (synonyms != nullptr) {
        auto it = synonyms->find(lemma);
        if (it != synonyms->end()) return it->second;
    }
    return lemma;
}

}  // namespace driftbench
