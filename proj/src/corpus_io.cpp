#include "driftbench/corpus_io.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace driftbench {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, int lineno, const std::string& what) {
    throw ParseError(path + ": line " + std::to_string(lineno) + ": " + what);
}

std::vector<float> read_feature(const json& arr, int expected_dim, const std::string& path, int lineno) {
    if (!arr.is_array()) fail(path, lineno, "feature is not an array");
    if (static_cast<int>(arr.size()) != expected_dim)
        throw DimensionMismatch(path + ": line " + std::to_string(lineno) + ": feature length " +
                                std::to_string(arr.size()) + ", expected " + std::to_string(expected_dim));
    std::vector<float> out;
    out.reserve(arr.size());
    for (const auto& v : arr) {
        if (!v.is_number()) fail(path, lineno, "feature entry is not a number");
        out.push_back(v.get<float>());
    }
    return out;
}

}  // namespace

std::vector<Instance> ingest_jsonl(const std::string& path, Vocabulary& vocab,
                                   const IngestOptions& options) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);

    Lemmatizer lemmatizer;
    std::vector<Instance> instances;
    std::string line;
    int lineno = 0;
    std::int64_t uid = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            fail(path, lineno, std::string("invalid JSON: ") + e.what());
        }
        for (const char* field : {"image_feature", "object_features", "tokens", "pos", "mask_span"}) {
            if (!obj.contains(field)) fail(path, lineno, std::string("missing '") + field + "' field");
        }

        Instance inst;
        inst.image_feature = read_feature(obj["image_feature"], options.visual_dim, path, lineno);
        const auto& objs = obj["object_features"];
        if (!objs.is_array()) fail(path, lineno, "'object_features' is not an array");
        if (static_cast<int>(objs.size()) > options.max_objects)
            fail(path, lineno, "more than max_objects object features");
        for (const auto& feature : objs)
            inst.object_features.push_back(read_feature(feature, options.visual_dim, path, lineno));

        const auto& toks = obj["tokens"];
        const auto& tags = obj["pos"];
        if (!toks.is_array() || !tags.is_array()) fail(path, lineno, "'tokens'/'pos' must be arrays");
        if (toks.size() != tags.size()) fail(path, lineno, "'tokens' and 'pos' lengths differ");
        if (static_cast<int>(toks.size()) > options.max_text_len)
            fail(path, lineno, "caption longer than max_text_len");

        std::vector<TaggedToken> tagged;
        for (std::size_t i = 0; i < toks.size(); ++i) {
            if (!toks[i].is_string() || !tags[i].is_string())
                fail(path, lineno, "token and pos entries must be strings");
            tagged.push_back({toks[i].get<std::string>(), tags[i].get<std::string>()});
            if (tagged.back().pos.empty()) fail(path, lineno, "empty POS tag");
        }

        const auto& span = obj["mask_span"];
        if (!span.is_array() || span.size() != 2) fail(path, lineno, "'mask_span' must be [start, end]");
        int s = span[0].get<int>(), e = span[1].get<int>();
        if (!(0 <= s && s < e && e <= static_cast<int>(tagged.size())))
            fail(path, lineno, "mask_span out of range");

        bool has_noun = false;
        for (int i = s; i < e; ++i) {
            if (role_of_tag(tagged[static_cast<std::size_t>(i)].pos) == PosRole::Noun) has_noun = true;
        }
        if (!has_noun) fail(path, lineno, "masked span contains no noun");

        for (std::size_t i = 0; i < tagged.size(); ++i) {
            TokenId id = options.extend_vocab ? vocab.add(tagged[i].surface) : vocab.lookup(tagged[i].surface);
            inst.tokens.push_back(id);
            inst.pos.push_back(tagged[i].pos);
            if (options.extend_vocab) vocab.observe_tag(tagged[i].surface, tagged[i].pos);
        }
        inst.span_begin = s;
        inst.span_end = e;
        inst.label_tokens.assign(inst.tokens.begin() + s, inst.tokens.begin() + e);
        for (int i = s; i < e; ++i) inst.tokens[static_cast<std::size_t>(i)] = Vocabulary::kMask;

        if (obj.contains("task_id")) {
            inst.task_id = obj["task_id"].get<std::string>();
        } else {
            inst.task_id = derive_task_id(
                std::span<const TaggedToken>(tagged.data() + s, static_cast<std::size_t>(e - s)),
                lemmatizer, options.synonyms);
        }
        inst.uid = uid++;
        instances.push_back(std::move(inst));
    }
    if (options.extend_vocab) vocab.finalize_roles();
    return instances;
}

void write_jsonl(const std::string& path, const std::vector<Instance>& instances,
                 const Vocabulary& vocab) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open " + path + " for writing");
    for (const auto& inst : instances) {
        json obj;
        obj["image_feature"] = inst.image_feature;
        obj["object_features"] = inst.object_features;
        json toks = json::array();
        for (std::size_t i = 0; i < inst.tokens.size(); ++i) {
            int pos = static_cast<int>(i);
            TokenId id = (pos >= inst.span_begin && pos < inst.span_end)
                             ? inst.label_tokens[static_cast<std::size_t>(pos - inst.span_begin)]
                             : inst.tokens[i];
            toks.push_back(vocab.surface(id));
        }
        obj["tokens"] = std::move(toks);
        obj["pos"] = inst.pos;
        obj["mask_span"] = {inst.span_begin, inst.span_end};
        obj["task_id"] = inst.task_id;
        out << obj.dump() << '\n';
    }
}

SynonymTable load_synonym_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    SynonymTable table;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) fail(path, lineno, "expected noun<TAB>category");
        table[line.substr(0, tab)] = line.substr(tab + 1);
    }
    return table;
}

std::vector<CompositionPair> load_held_out_pairs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::vector<CompositionPair> pairs;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto t1 = line.find('\t');
        auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) fail(path, lineno, "expected modifier<TAB>noun<TAB>kind");
        CompositionPair p{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)};
        if (p.kind != "noun-adj" && p.kind != "noun-verb")
            fail(path, lineno, "kind must be noun-adj or noun-verb");
        if (p.modifier == p.noun) fail(path, lineno, "modifier equals noun");
        pairs.push_back(std::move(p));
    }
    return pairs;
}

void write_held_out_pairs(const std::string& path, const std::vector<CompositionPair>& pairs) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open " + path + " for writing");
    for (const auto& p : pairs) out << p.modifier << '\t' << p.noun << '\t' << p.kind << '\n';
}

}  // namespace driftbench
