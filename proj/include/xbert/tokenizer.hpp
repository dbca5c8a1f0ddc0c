#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace xbert {

using TokenId = std::uint32_t;

struct StringHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const noexcept { return std::hash<std::string_view>{}(s); }
};

/// Token strings indexed by id, with the five special tokens resolved.
class Vocabulary {
public:
    /// Throws VocabError on duplicates or a missing special token.
    static Vocabulary from_tokens(std::vector<std::string> tokens);

    std::size_t size() const noexcept { return tokens_.size(); }
    const std::string& token(TokenId id) const { return tokens_.at(id); }
    std::optional<TokenId> find(std::string_view token) const;

    TokenId cls_id() const noexcept { return cls_; }
    TokenId sep_id() const noexcept { return sep_; }
    TokenId mask_id() const noexcept { return mask_; }
    TokenId pad_id() const noexcept { return pad_; }
    TokenId unk_id() const noexcept { return unk_; }
    bool is_special(TokenId id) const noexcept;

    /// Ids of every non-special token, ascending. Source of random replacements during masking.
    const std::vector<TokenId>& regular_ids() const noexcept { return regular_; }

    /// SHA-256 (hex) of the token list joined by newlines.
    std::string digest() const;

    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId, StringHash, std::equal_to<>> index_;
    std::vector<TokenId> regular_;
    TokenId cls_ = 0, sep_ = 0, mask_ = 0, pad_ = 0, unk_ = 0;
};

/// One token per line; the token on line k gets id k.
Vocabulary load_vocab(const std::filesystem::path& path);

/// Resolves TOKENIZER.NAME_OR_PATH: an existing file, else `<vocab_dir>/<name>.txt`,
/// else `<vocab_dir>/<name>/vocab.txt`. Throws VocabError when none exists.
std::filesystem::path resolve_vocab(const std::string& name_or_path, const std::filesystem::path& vocab_dir);

/// Whitespace split with every punctuation character as its own word. With
/// `do_lower_case`, text is lower-cased and combining marks are stripped after
/// canonical decomposition. CJK characters are treated as ordinary letters.
std::vector<std::string> basic_tokenize(std::string_view text, bool do_lower_case);

constexpr std::size_t kMaxCharsPerWord = 200;

struct WordPiece {
    TokenId id;
    bool continuation;
};

/// Greedy longest-prefix match; pieces after the first carry a "##" prefix.
/// Whole-word [UNK] when any position fails or the word is too long (in code points).
std::vector<WordPiece> wordpiece_pieces(std::string_view word, const Vocabulary& vocab, std::size_t max_chars_per_word = kMaxCharsPerWord);
std::vector<TokenId> wordpiece(std::string_view word, const Vocabulary& vocab, std::size_t max_chars_per_word = kMaxCharsPerWord);

struct TokenSequence {
    std::vector<TokenId> ids;
    std::vector<bool> is_continuation;
    bool operator==(const TokenSequence&) const = default;
};

/// basic_tokenize then wordpiece per word. No [CLS]/[SEP] framing.
TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, bool do_lower_case);

}  // namespace xbert
