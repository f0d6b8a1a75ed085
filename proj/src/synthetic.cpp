#include "driftbench/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "driftbench/rng.hpp"

namespace driftbench {

namespace {

const char* kNouns[] = {"dog",   "cat",  "bird",  "horse", "bus",  "truck", "plane",
                        "boat",  "apple", "chair", "table", "book", "ball",  "child",
                        "man",   "woman", "car",   "bike",  "cup",  "phone"};
const char* kAdjectives[] = {"red",  "blue",  "big", "small", "white",
                             "black", "green", "tall", "old",  "new"};
const char* kVerbs[] = {"running", "sitting",  "standing", "flying", "eating",
                        "jumping", "walking", "sleeping", "riding", "playing"};

std::vector<std::string> atom_names(const char* const* builtin, int builtin_count, int want,
                                    const std::string& prefix) {
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(want));
    for (int i = 0; i < want; ++i) {
        if (i < builtin_count)
            out.emplace_back(builtin[i]);
        else
            out.emplace_back(prefix + std::to_string(i));
    }
    return out;
}

std::vector<float> unit_prototype(int dim, Rng& rng) {
    std::vector<float> v(static_cast<std::size_t>(dim));
    double norm2 = 0.0;
    for (auto& x : v) {
        double g = rng.normal();
        x = static_cast<float>(g);
        norm2 += g * g;
    }
    float inv = static_cast<float>(1.0 / std::sqrt(std::max(norm2, 1e-12)));
    for (auto& x : v) x *= inv;
    return v;
}

}  // namespace

std::vector<Instance> expand_caption(const std::vector<TaggedToken>& caption,
                                     const std::vector<float>& image_feature,
                                     const std::vector<std::vector<float>>& object_features,
                                     Vocabulary& vocab,
                                     const Lemmatizer& lemmatizer,
                                     const SynonymTable* synonyms) {
    std::vector<TokenId> ids(caption.size());
    std::vector<std::string> pos(caption.size());
    for (std::size_t i = 0; i < caption.size(); ++i) {
        ids[i] = vocab.add(caption[i].surface, role_of_tag(caption[i].pos));
        pos[i] = caption[i].pos;
    }
    std::vector<Instance> out;
    for (auto [begin, end] : chunk_caption(caption)) {
        Instance inst;
        inst.image_feature = image_feature;
        inst.object_features = object_features;
        inst.tokens = ids;
        inst.pos = pos;
        inst.span_begin = begin;
        inst.span_end = end;
        inst.label_tokens.assign(ids.begin() + begin, ids.begin() + end);
        for (int i = begin; i < end; ++i) inst.tokens[static_cast<std::size_t>(i)] = Vocabulary::kMask;
        inst.task_id = derive_task_id(
            std::span<const TaggedToken>(caption.data() + begin, static_cast<std::size_t>(end - begin)),
            lemmatizer, synonyms);
        out.push_back(std::move(inst));
    }
    return out;
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed) {
    if (spec.nouns < 1) throw SpecError("synthetic spec needs at least one noun");
    if (spec.modifier_count() < 1) throw SpecError("synthetic spec needs at least one modifier atom");
    if (spec.modifiers_per_noun > spec.modifier_count())
        throw SpecError("composition count exceeds template capacity: " +
                        std::to_string(spec.modifiers_per_noun) + " modifiers per noun requested, " +
                        std::to_string(spec.modifier_count()) + " atoms available");
    if (spec.visual_dim < 1 || spec.max_objects < 1) throw SpecError("visual_dim and max_objects must be positive");
    if (spec.noise_sigma < 0) throw SpecError("noise_sigma must be non-negative");

    SyntheticCorpus corpus;
    corpus.nouns = atom_names(kNouns, 20, spec.nouns, "noun");
    corpus.adjectives = atom_names(kAdjectives, 10, spec.adjectives, "adj");
    corpus.verbs = atom_names(kVerbs, 10, spec.verbs, "verbing");

    // Fixed vocab order: template words first, then atoms.
    for (const char* w : {"look", "at", "the", "now", "there", "is", "here"}) corpus.vocab.add(w);
    for (const auto& w : corpus.nouns) corpus.vocab.add(w, PosRole::Noun);
    for (const auto& w : corpus.adjectives) corpus.vocab.add(w, PosRole::Adjective);
    for (const auto& w : corpus.verbs) corpus.vocab.add(w, PosRole::Verb);

    Rng proto_rng = Rng::derive(seed, 1);
    std::vector<std::vector<float>> noun_proto, mod_proto;
    for (int i = 0; i < spec.nouns; ++i) noun_proto.push_back(unit_prototype(spec.visual_dim, proto_rng));
    for (int i = 0; i < spec.modifier_count(); ++i) mod_proto.push_back(unit_prototype(spec.visual_dim, proto_rng));
    // One interaction vector per (noun, modifier) pair, in noun-major order.
    std::vector<std::vector<float>> pair_proto;
    pair_proto.reserve(static_cast<std::size_t>(spec.nouns) * spec.modifier_count());
    for (int i = 0; i < spec.nouns * spec.modifier_count(); ++i)
        pair_proto.push_back(unit_prototype(spec.visual_dim, proto_rng));

    Lemmatizer lemmatizer;
    Rng scene_rng = Rng::derive(seed, 2);
    std::int64_t uid = 0;
    int per_noun = spec.modifiers_per_noun > 0 ? spec.modifiers_per_noun : spec.modifier_count();

    auto make_instances = [&](std::vector<Instance>& sink, int noun_idx, int mod_idx, int count) {
        const std::string& noun = corpus.nouns[static_cast<std::size_t>(noun_idx)];
        const bool is_adj = mod_idx < spec.adjectives;
        const std::string& mod = is_adj ? corpus.adjectives[static_cast<std::size_t>(mod_idx)]
                                        : corpus.verbs[static_cast<std::size_t>(mod_idx - spec.adjectives)];
        std::vector<TaggedToken> caption;
        if (is_adj)
            caption = {{"look", "VB"}, {"at", "IN"}, {"the", "DT"}, {mod, "JJ"}, {noun, "NN"}, {"now", "RB"}};
        else
            caption = {{"there", "EX"}, {"is", "VBZ"}, {"the", "DT"}, {noun, "NN"}, {mod, "VBG"}, {"here", "RB"}};

        for (int c = 0; c < count; ++c) {
            int n_obj = 1 + static_cast<int>(scene_rng.uniform_below(static_cast<std::uint64_t>(spec.max_objects)));
            std::vector<std::vector<float>> objects(static_cast<std::size_t>(n_obj));
            std::vector<float> image(static_cast<std::size_t>(spec.visual_dim), 0.0f);
            const auto& interaction =
                pair_proto[static_cast<std::size_t>(noun_idx) * spec.modifier_count() +
                           static_cast<std::size_t>(mod_idx)];
            for (auto& obj : objects) {
                obj.resize(static_cast<std::size_t>(spec.visual_dim));
                for (int d = 0; d < spec.visual_dim; ++d) {
                    double value = noun_proto[static_cast<std::size_t>(noun_idx)][static_cast<std::size_t>(d)] +
                                   mod_proto[static_cast<std::size_t>(mod_idx)][static_cast<std::size_t>(d)] +
                                   spec.composition_coupling * interaction[static_cast<std::size_t>(d)];
                    if (spec.noise_sigma > 0) value += scene_rng.normal(0.0, spec.noise_sigma);
                    obj[static_cast<std::size_t>(d)] = static_cast<float>(value);
                    image[static_cast<std::size_t>(d)] += static_cast<float>(value);
                }
            }
            for (auto& x : image) x /= static_cast<float>(n_obj);

            auto expanded = expand_caption(caption, image, objects, corpus.vocab, lemmatizer);
            if (expanded.size() != 1)
                throw SpecError("template produced " + std::to_string(expanded.size()) + " chunks, expected 1");
            expanded[0].uid = uid++;
            sink.push_back(std::move(expanded[0]));
        }
    };

    for (int ni = 0; ni < spec.nouns; ++ni) {
        for (int j = 0; j < per_noun; ++j) {
            int mi = (ni + j) % spec.modifier_count();
            make_instances(corpus.train, ni, mi, spec.train_per_composition);
            make_instances(corpus.val, ni, mi, spec.val_per_composition);
            make_instances(corpus.test, ni, mi, spec.test_per_composition);
        }
    }
    return corpus;
}

std::vector<CompositionPair> span_compositions(const Instance& inst,
                                               const Vocabulary& vocab,
                                               const Lemmatizer& lemmatizer) {
    int head = -1;
    for (int i = inst.span_begin; i < inst.span_end; ++i) {
        const std::string& tag = inst.pos[static_cast<std::size_t>(i)];
        if (tag == "NN" || tag == "NNS") head = i;
    }
    if (head < 0) return {};
    std::string noun =
        lemmatizer.lemma(vocab.surface(inst.label_tokens[static_cast<std::size_t>(head - inst.span_begin)]));
    std::vector<CompositionPair> pairs;
    for (int i = inst.span_begin; i < inst.span_end; ++i) {
        if (i == head) continue;
        const std::string& tag = inst.pos[static_cast<std::size_t>(i)];
        PosRole role = role_of_tag(tag);
        if (role != PosRole::Adjective && role != PosRole::Verb) continue;
        if (tag == "NN" || tag == "NNS") continue;
        std::string mod = vocab.surface(inst.label_tokens[static_cast<std::size_t>(i - inst.span_begin)]);
        pairs.push_back({mod, noun, role == PosRole::Adjective ? "noun-adj" : "noun-verb"});
    }
    return pairs;
}

bool modifier_matches_atom(const std::string& surface, const std::string& atom) {
    return surface == atom || verb_stem(surface) == atom;
}

namespace {

bool contains_held_out(const Instance& inst, const std::vector<CompositionPair>& held_out,
                       const Vocabulary& vocab, const Lemmatizer& lemmatizer) {
    auto pairs = span_compositions(inst, vocab, lemmatizer);
    for (const auto& p : pairs) {
        for (const auto& h : held_out) {
            if (p.noun == h.noun && modifier_matches_atom(p.modifier, h.modifier)) return true;
        }
    }
    return false;
}

}  // namespace

SplitResult build_compositional_split(std::vector<Instance> train,
                                      std::vector<Instance> val,
                                      std::vector<Instance> test,
                                      const std::vector<CompositionPair>& held_out,
                                      const Vocabulary& vocab,
                                      const Lemmatizer& lemmatizer) {
    SplitResult result;
    auto filter = [&](std::vector<Instance>& src, std::vector<Instance>& keep,
                      std::vector<Instance>* held_sink) {
        for (auto& inst : src) {
            if (contains_held_out(inst, held_out, vocab, lemmatizer)) {
                if (held_sink != nullptr) held_sink->push_back(std::move(inst));
            } else {
                keep.push_back(std::move(inst));
            }
        }
    };
    filter(train, result.train, nullptr);
    filter(val, result.val, nullptr);
    filter(test, result.test, &result.compositional_test);

    // Every atom of every held-out pair must survive in train via another
    // composition, otherwise its generalization cannot be measured.
    for (const auto& h : held_out) {
        bool noun_seen = false, mod_seen = false;
        for (const auto& inst : result.train) {
            for (const auto& p : span_compositions(inst, vocab, lemmatizer)) {
                if (p.noun == h.noun) noun_seen = true;
                if (modifier_matches_atom(p.modifier, h.modifier)) mod_seen = true;
            }
            if (noun_seen && mod_seen) break;
        }
        if (!noun_seen)
            result.warnings.push_back("held-out noun '" + h.noun + "' never appears in train");
        if (!mod_seen)
            result.warnings.push_back("held-out modifier '" + h.modifier + "' never appears in train");
    }
    return result;
}

std::vector<CompositionPair> default_held_out_pairs(const SyntheticCorpus& corpus, int count) {
    std::vector<CompositionPair> pairs;
    int adj_i = 0, verb_i = 0;
    const int n_nouns = static_cast<int>(corpus.nouns.size());
    for (int k = 0; k < count; ++k) {
        // Spread the held nouns over the whole inventory.
        int noun_idx = count > 0 ? (k * n_nouns) / std::max(count, 1) % n_nouns : 0;
        const std::string& noun = corpus.nouns[static_cast<std::size_t>(noun_idx)];
        if (k % 2 == 0 && !corpus.adjectives.empty()) {
            pairs.push_back({corpus.adjectives[static_cast<std::size_t>(adj_i++) % corpus.adjectives.size()],
                             noun, "noun-adj"});
        } else if (!corpus.verbs.empty()) {
            pairs.push_back({corpus.verbs[static_cast<std::size_t>(verb_i++) % corpus.verbs.size()], noun,
                             "noun-verb"});
        } else if (!corpus.adjectives.empty()) {
            pairs.push_back({corpus.adjectives[static_cast<std::size_t>(adj_i++) % corpus.adjectives.size()],
                             noun, "noun-adj"});
        }
    }
    return pairs;
}

}  // namespace driftbench
