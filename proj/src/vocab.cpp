#include "steerlab/vocab.hpp"

#include "steerlab/container.hpp"
#include "steerlab/error.hpp"

#include <algorithm>

namespace steerlab {

namespace {

std::string unescape(std::string_view line) {
    std::string out;
    out.reserve(line.size());
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '\\' && i + 1 < line.size()) {
            const char next = line[i + 1];
            if (next == 'n') { out.push_back('\n'); ++i; continue; }
            if (next == 't') { out.push_back('\t'); ++i; continue; }
            if (next == '\\') { out.push_back('\\'); ++i; continue; }
        }
        out.push_back(line[i]);
    }
    return out;
}

std::string escape(std::string_view token) {
    std::string out;
    for (char c : token) {
        switch (c) {
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            case '\\': out += "\\\\"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

std::size_t code_point_length(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xe) return 3;
    if ((lead >> 3) == 0x1e) return 4;
    return 1;
}

} // namespace

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (i < kReservedTokens || tokens_[i].empty()) continue;
        if (index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
            max_len_ = std::max(max_len_, tokens_[i].size());
        }
    }
}

Vocab Vocab::parse(std::string_view text) {
    std::vector<std::string> tokens;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        tokens.push_back(unescape(line));
        start = end + 1;
    }
    return Vocab(std::move(tokens));
}

Vocab Vocab::from_file(const std::string& path) {
    return parse(read_file_bytes(path));
}

std::string Vocab::serialize() const {
    std::string out;
    for (const auto& t : tokens_) {
        out += escape(t);
        out.push_back('\n');
    }
    return out;
}

void Vocab::save(const std::string& path) const {
    write_file_bytes(path, serialize());
}

std::optional<TokenId> Vocab::find(std::string_view text) const {
    auto it = index_.find(std::string(text));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::vector<TokenId> Vocab::tokenize(std::string_view text) const {
    if (index_.empty()) throw Error(ErrorCode::empty_vocabulary, "vocabulary has no matchable entries");
    std::vector<TokenId> ids;
    std::size_t pos = 0;
    bool in_unknown = false;
    std::string probe;
    while (pos < text.size()) {
        const std::size_t longest = std::min(max_len_, text.size() - pos);
        std::optional<TokenId> hit;
        std::size_t hit_len = 0;
        for (std::size_t len = longest; len > 0; --len) {
            probe.assign(text.substr(pos, len));
            auto it = index_.find(probe);
            if (it != index_.end()) {
                hit = it->second;
                hit_len = len;
                break;
            }
        }
        if (hit) {
            ids.push_back(*hit);
            pos += hit_len;
            in_unknown = false;
        } else {
            if (!in_unknown) ids.push_back(kUnkId);
            in_unknown = true;
            pos += std::min(code_point_length(static_cast<unsigned char>(text[pos])), text.size() - pos);
        }
    }
    return ids;
}

std::string Vocab::detokenize(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
            throw Error(ErrorCode::invalid_argument, "token id " + std::to_string(id) + " out of range");
        }
        if (id == kBosId || id == kEosId) continue;
        if (id == kUnkId) {
            out += "\xEF\xBF\xBD";
            continue;
        }
        out += tokens_[static_cast<std::size_t>(id)];
    }
    return out;
}

} // namespace steerlab
