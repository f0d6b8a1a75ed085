#include "driftbench/vocab.hpp"

namespace driftbench {

PosRole role_of_tag(const std::string& tag) {
    if (tag == "NN" || tag == "NNS" || tag == "NNP" || tag == "NNPS") return PosRole::Noun;
    if (tag == "JJ" || tag == "JJR" || tag == "JJS") return PosRole::Adjective;
    if (tag.size() >= 2 && tag[0] == 'V' && tag[1] == 'B') return PosRole::Verb;
    return PosRole::Other;
}

Vocabulary::Vocabulary() {
    add("[MASK]");
    add("[PAD]");
    add("[UNK]");
}

TokenId Vocabulary::add(const std::string& token, PosRole role) {
    auto it = token_to_id_.find(token);
    if (it != token_to_id_.end()) return it->second;
    TokenId id = static_cast<TokenId>(id_to_token_.size());
    id_to_token_.push_back(token);
    roles_.push_back(role);
    token_to_id_.emplace(token, id);
    return id;
}

TokenId Vocabulary::lookup(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(const std::string& token) const {
    return token_to_id_.count(token) > 0;
}

void Vocabulary::observe_tag(const std::string& token, const std::string& tag) {
    role_votes_[token][role_of_tag(tag)] += 1;
}

void Vocabulary::finalize_roles() {
    for (const auto& [token, votes] : role_votes_) {
        auto it = token_to_id_.find(token);
        if (it == token_to_id_.end()) continue;
        PosRole best = PosRole::Other;
        int best_count = -1;
        for (const auto& [role, count] : votes) {
            if (count > best_count) {
                best = role;
                best_count = count;
            }
        }
        roles_[static_cast<std::size_t>(it->second)] = best;
    }
    role_votes_.clear();
}

}  // namespace driftbench
