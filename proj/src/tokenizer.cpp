#include "xbert/tokenizer.hpp"

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <array>
#include <fstream>

#include <fmt/format.h>

#include "xbert/digest.hpp"
#include "xbert/error.hpp"

namespace xbert {

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    Vocabulary v;
    v.tokens_ = std::move(tokens);
    v.index_.reserve(v.tokens_.size());
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
        if (!v.index_.emplace(v.tokens_[i], static_cast<TokenId>(i)).second) {
            throw VocabError(fmt::format("duplicate vocabulary token '{}' at line {}", v.tokens_[i], i + 1));
        }
    }
    const std::array<std::pair<const char*, TokenId*>, 5> specials{{
        {"[PAD]", &v.pad_}, {"[UNK]", &v.unk_}, {"[CLS]", &v.cls_}, {"[SEP]", &v.sep_}, {"[MASK]", &v.mask_},
    }};
    for (const auto& [name, slot] : specials) {
        auto id = v.find(name);
        if (!id) {
            throw VocabError(fmt::format("vocabulary is missing special token {}", name));
        }
        *slot = *id;
    }
    for (TokenId id = 0; id < v.tokens_.size(); ++id) {
        if (!v.is_special(id)) {
            v.regular_.push_back(id);
        }
    }
    return v;
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
    auto it = index_.find(token);
    if (it == index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

bool Vocabulary::is_special(TokenId id) const noexcept {
    return id == cls_ || id == sep_ || id == mask_ || id == pad_ || id == unk_;
}

std::string Vocabulary::digest() const {
    Sha256 h;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (i > 0) {
            h.update("\n");
        }
        h.update(tokens_[i]);
    }
    return to_hex(h.finish());
}

Vocabulary load_vocab(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw VocabError("cannot open vocabulary file " + path.string());
    }
    std::vector<std::string> tokens;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        tokens.push_back(std::move(line));
    }
    return Vocabulary::from_tokens(std::move(tokens));
}

std::filesystem::path resolve_vocab(const std::string& name_or_path, const std::filesystem::path& vocab_dir) {
    namespace fs = std::filesystem;
    if (fs::is_regular_file(name_or_path)) {
        return name_or_path;
    }
    for (const auto& candidate : {vocab_dir / (name_or_path + ".txt"), vocab_dir / name_or_path / "vocab.txt"}) {
        if (fs::is_regular_file(candidate)) {
            return candidate;
        }
    }
    throw VocabError(fmt::format("vocabulary '{}' not found (looked for a file of that name, {}/{}.txt and {}/{}/vocab.txt)",
                                 name_or_path, vocab_dir.string(), name_or_path, vocab_dir.string(), name_or_path));
}

namespace {

bool is_punctuation(UChar32 c) {
    if ((c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) || (c >= 123 && c <= 126)) {
        return true;
    }
    switch (u_charType(c)) {
        case U_CONNECTOR_PUNCTUATION:
        case U_DASH_PUNCTUATION:
        case U_START_PUNCTUATION:
        case U_END_PUNCTUATION:
        case U_INITIAL_PUNCTUATION:
        case U_FINAL_PUNCTUATION:
        case U_OTHER_PUNCTUATION:
            return true;
        default:
            return false;
    }
}

icu::UnicodeString lower_and_strip_accents(const icu::UnicodeString& in) {
    icu::UnicodeString lowered(in);
    lowered.toLower(icu::Locale::getRoot());
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* nfd = icu::Normalizer2::getNFDInstance(status);
    if (U_FAILURE(status)) {
        throw Error(fmt::format("ICU NFD normalizer unavailable: {}", u_errorName(status)));
    }
    icu::UnicodeString decomposed = nfd->normalize(lowered, status);
    if (U_FAILURE(status)) {
        throw Error(fmt::format("ICU normalization failed: {}", u_errorName(status)));
    }
    icu::UnicodeString out;
    for (int32_t i = 0; i < decomposed.length();) {
        const UChar32 c = decomposed.char32At(i);
        i += U16_LENGTH(c);
        if (u_charType(c) != U_NON_SPACING_MARK) {
            out.append(c);
        }
    }
    return out;
}

}  // namespace

std::vector<std::string> basic_tokenize(std::string_view text, bool do_lower_case) {
    icu::UnicodeString u = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
    if (do_lower_case) {
        u = lower_and_strip_accents(u);
    }
    std::vector<std::string> words;
    icu::UnicodeString current;
    auto flush = [&] {
        if (!current.isEmpty()) {
            std::string utf8;
            current.toUTF8String(utf8);
            words.push_back(std::move(utf8));
            current.remove();
        }
    };
    for (int32_t i = 0; i < u.length();) {
        const UChar32 c = u.char32At(i);
        i += U16_LENGTH(c);
        if (u_isUWhiteSpace(c)) {
            flush();
        } else if (is_punctuation(c)) {
            flush();
            current.append(c);
            flush();
        } else {
            current.append(c);
        }
    }
    flush();
    return words;
}

std::vector<WordPiece> wordpiece_pieces(std::string_view word, const Vocabulary& vocab, std::size_t max_chars_per_word) {
    // Byte offset of every code point boundary.
    std::vector<std::size_t> bounds;
    bounds.reserve(word.size() + 1);
    for (std::size_t i = 0; i < word.size();) {
        bounds.push_back(i);
        UChar32 c;
        int32_t pos = static_cast<int32_t>(i);
        U8_NEXT(word.data(), pos, static_cast<int32_t>(word.size()), c);
        i = static_cast<std::size_t>(pos);
    }
    bounds.push_back(word.size());
    const std::size_t n_chars = bounds.size() - 1;

    if (n_chars == 0 || n_chars > max_chars_per_word) {
        return {{vocab.unk_id(), false}};
    }

    std::vector<WordPiece> pieces;
    std::string candidate;
    std::size_t start = 0;
    while (start < n_chars) {
        std::optional<TokenId> match;
        std::size_t end = n_chars;
        for (; end > start; --end) {
            candidate.clear();
            if (start > 0) {
                candidate = "##";
            }
            candidate.append(word.substr(bounds[start], bounds[end] - bounds[start]));
            if ((match = vocab.find(candidate))) {
                break;
            }
        }
        if (!match) {
            return {{vocab.unk_id(), false}};
        }
        pieces.push_back({*match, start > 0});
        start = end;
    }
    return pieces;
}

std::vector<TokenId> wordpiece(std::string_view word, const Vocabulary& vocab, std::size_t max_chars_per_word) {
    std::vector<TokenId> ids;
    for (const auto& p : wordpiece_pieces(word, vocab, max_chars_per_word)) {
        ids.push_back(p.id);
    }
    return ids;
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, bool do_lower_case) {
    TokenSequence seq;
    for (const auto& word : basic_tokenize(text, do_lower_case)) {
        for (const auto& p : wordpiece_pieces(word, vocab)) {
            seq.ids.push_back(p.id);
            seq.is_continuation.push_back(p.continuation);
        }
    }
    return seq;
}

}  // namespace xbert
