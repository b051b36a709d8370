#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace steerlab {

using TokenId = std::int32_t;

inline constexpr TokenId kBosId = 0;
inline constexpr TokenId kEosId = 1;
inline constexpr TokenId kUnkId = 2;
inline constexpr std::size_t kReservedTokens = 3;

// Explicit vocabulary with greedy longest-match segmentation.
//
// File format: UTF-8, one token per line, line number (from 0) is the id. The
// first three lines are the reserved BOS, EOS and UNK entries; they are never
// produced by segmentation. Backslash escapes \n, \t and \\ let a token carry
// a newline, tab or backslash.
class Vocab {
public:
    Vocab() = default;
    explicit Vocab(std::vector<std::string> tokens);

    static Vocab from_file(const std::string& path);
    static Vocab parse(std::string_view text);
    std::string serialize() const;
    void save(const std::string& path) const;

    std::size_t size() const { return tokens_.size(); }
    const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    std::optional<TokenId> find(std::string_view text) const;

    // Longest match at every position; each maximal run of unmatched code
    // points becomes a single UNK.
    std::vector<TokenId> tokenize(std::string_view text) const;

    // BOS/EOS render as nothing, UNK as U+FFFD.
    std::string detokenize(std::span<const TokenId> ids) const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
    std::size_t max_len_ = 0;
};

} // namespace steerlab
