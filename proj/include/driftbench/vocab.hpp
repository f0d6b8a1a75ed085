#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace driftbench {

using TokenId = std::int32_t;

enum class PosRole : std::uint8_t { Noun, Adjective, Verb, Other };

// Coarse role of a Penn Treebank tag.
PosRole role_of_tag(const std::string& tag);

// Dense token <-> id mapping with fixed special ids.
class Vocabulary {
public:
    static constexpr TokenId kMask = 0;
    static constexpr TokenId kPad = 1;
    static constexpr TokenId kUnk = 2;

    Vocabulary();

    TokenId add(const std::string& token, PosRole role = PosRole::Other);
    // Returns UNK for unseen tokens.
    TokenId lookup(const std::string& token) const;
    bool contains(const std::string& token) const;

    const std::string& surface(TokenId id) const { return id_to_token_.at(static_cast<std::size_t>(id)); }
    PosRole role(TokenId id) const { return roles_.at(static_cast<std::size_t>(id)); }
    void set_role(TokenId id, PosRole role) { roles_.at(static_cast<std::size_t>(id)) = role; }

    int size() const { return static_cast<int>(id_to_token_.size()); }

    // Majority-vote role assignment from tag observations; ties resolve in
    // enum order (noun < adjective < verb < other).
    void observe_tag(const std::string& token, const std::string& tag);
    void finalize_roles();

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, TokenId> token_to_id_;
    std::vector<PosRole> roles_;
    std::map<std::string, std::map<PosRole, int>> role_votes_;
};

}  // namespace driftbench
