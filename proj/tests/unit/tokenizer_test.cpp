#include <gtest/gtest.h>

#include <fstream>

#include <json.hpp>

#include "support.hpp"
#include "xbert/error.hpp"
#include "xbert/tokenizer.hpp"

using namespace xbert;
namespace fs = std::filesystem;
using xbert::testing::fixture;
using xbert::testing::TempDir;
using xbert::testing::write_text;

namespace {

Vocabulary small_vocab() {
    return Vocabulary::from_tokens({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "hello", "un", "##aff", "##able", "aff", "world", ",", "!", "##s"});
}

std::string vocab_error(const std::string& text) {
    TempDir d;
    write_text(d / "v.txt", text);
    try {
        load_vocab(d / "v.txt");
    } catch (const VocabError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(Vocabulary, LineNumbering) {
    TempDir d;
    write_text(d / "v.txt", "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\nhello\n");
    const auto v = load_vocab(d / "v.txt");
    EXPECT_EQ(v.size(), 6u);
    EXPECT_EQ(v.cls_id(), 2u);
    EXPECT_EQ(v.pad_id(), 0u);
    EXPECT_EQ(v.mask_id(), 4u);
    EXPECT_EQ(v.find("hello"), std::optional<TokenId>(5));
    EXPECT_EQ(v.regular_ids(), std::vector<TokenId>{5});
    EXPECT_TRUE(v.is_special(3));
    EXPECT_FALSE(v.is_special(5));
}

TEST(Vocabulary, Errors) {
    EXPECT_NE(vocab_error("[PAD]\n[UNK]\n[CLS]\n[SEP]\nhello\n").find("[MASK]"), std::string::npos);
    EXPECT_NE(vocab_error("[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\nhello\nhello\n").find("hello"), std::string::npos);
}

TEST(Vocabulary, Resolve) {
    TempDir d;
    write_text(d / "bert-large-uncased.txt", "x");
    write_text(d / "other/vocab.txt", "x");
    EXPECT_EQ(resolve_vocab("bert-large-uncased", d.path()), d / "bert-large-uncased.txt");
    EXPECT_EQ(resolve_vocab("other", d.path()), d / "other/vocab.txt");
    EXPECT_EQ(resolve_vocab((d / "other/vocab.txt").string(), "/nonexistent"), d / "other/vocab.txt");
    EXPECT_THROW(resolve_vocab("missing", d.path()), VocabError);
}

TEST(BasicTokenize, Examples) {
    EXPECT_EQ(basic_tokenize("Hello, world!", true), (std::vector<std::string>{"hello", ",", "world", "!"}));
    EXPECT_TRUE(basic_tokenize("", true).empty());
    EXPECT_EQ(basic_tokenize("H\xC3\xA9llo", true), std::vector<std::string>{"hello"});
    EXPECT_EQ(basic_tokenize("H\xC3\xA9llo", false), std::vector<std::string>{"H\xC3\xA9llo"});
    EXPECT_EQ(basic_tokenize("a\xE2\x80\x83" "b\xC2\xA0" "c\td\ne", true), (std::vector<std::string>{"a", "b", "c", "d", "e"}));
}

// Character-level oracle of accent stripping on Latin-1 letters: the
// decomposition base letter of each precomposed vowel.
TEST(BasicTokenize, AccentOracle) {
    const std::vector<std::pair<const char*, const char*>> table{
        {"\xC3\xA0", "a"}, {"\xC3\xA1", "a"}, {"\xC3\xA2", "a"}, {"\xC3\xA4", "a"}, {"\xC3\xA8", "e"}, {"\xC3\xA9", "e"},
        {"\xC3\xAA", "e"}, {"\xC3\xAB", "e"}, {"\xC3\xAD", "i"}, {"\xC3\xB1", "n"}, {"\xC3\xB3", "o"}, {"\xC3\xB6", "o"},
        {"\xC3\xBA", "u"}, {"\xC3\xBC", "u"}, {"\xC3\xA7", "c"}, {"\xC3\x89", "e"}, {"\xC3\x96", "o"},
    };
    for (const auto& [in, out] : table) {
        EXPECT_EQ(basic_tokenize(std::string("x") + in + "y", true), std::vector<std::string>{std::string("x") + out + "y"}) << in;
    }
}

TEST(Wordpiece, GreedyLongestMatch) {
    const auto v = small_vocab();
    EXPECT_EQ(wordpiece("unaffable", v), (std::vector<TokenId>{6, 7, 8}));
    EXPECT_EQ(wordpiece("hello", v), std::vector<TokenId>{5});
    EXPECT_EQ(wordpiece("xyzzy", v), std::vector<TokenId>{v.unk_id()});
    EXPECT_EQ(wordpiece("unaffablex", v), std::vector<TokenId>{v.unk_id()});
    EXPECT_EQ(wordpiece("hellos", v), (std::vector<TokenId>{5, 13}));
    EXPECT_EQ(wordpiece(std::string(201, 'a'), v), std::vector<TokenId>{v.unk_id()});
    const auto pieces = wordpiece_pieces("unaffable", v);
    ASSERT_EQ(pieces.size(), 3u);
    EXPECT_FALSE(pieces[0].continuation);
    EXPECT_TRUE(pieces[1].continuation);
}

TEST(Tokenize, Basics) {
    const auto v = small_vocab();
    EXPECT_TRUE(tokenize("", v, true).ids.empty());
    const auto t = tokenize("hello hello", v, true);
    EXPECT_EQ(t.ids, (std::vector<TokenId>{5, 5}));
    EXPECT_EQ(t.is_continuation, (std::vector<bool>{false, false}));
}

TEST(Tokenize, Golden) {
    const auto vocab = load_vocab(fixture("vocab_golden.txt"));
    std::ifstream in(fixture("tokenizer_golden.jsonl"));
    ASSERT_TRUE(in);
    int cases = 0;
    for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        const std::string text = j["text"];
        const bool lower = j["lower"];
        EXPECT_EQ(basic_tokenize(text, lower), j["words"].get<std::vector<std::string>>()) << text;
        const auto seq = tokenize(text, vocab, lower);
        EXPECT_EQ(seq.ids, j["ids"].get<std::vector<TokenId>>()) << text;
        std::vector<std::string> pieces;
        for (auto id : seq.ids) pieces.push_back(vocab.token(id));
        EXPECT_EQ(pieces, j["pieces"].get<std::vector<std::string>>()) << text;
        ++cases;
    }
    EXPECT_GE(cases, 20);
}

TEST(Tokenize, Properties) {
    const auto words = xbert::testing::make_words(400, 11);
    const auto vocab = Vocabulary::from_tokens(xbert::testing::vocab_lines(words));
    for (std::size_t i = 0; i + 1 < 200; ++i) {
        const auto& a = words[i];
        const auto& b = words[i + 1];
        auto ta = tokenize(a, vocab, true);
        const auto tb = tokenize(b, vocab, true);
        const auto tab = tokenize(a + " " + b, vocab, true);
        ta.ids.insert(ta.ids.end(), tb.ids.begin(), tb.ids.end());
        EXPECT_EQ(ta.ids, tab.ids);
        for (auto id : tab.ids) EXPECT_LT(id, vocab.size());
    }
    // Round trip on covered but unlisted words: letters and ## letters always cover them.
    for (const char* w : {"zebraquux", "Mississippi", "qwxv"}) {
        const auto seq = tokenize(w, vocab, true);
        std::string joined;
        for (std::size_t k = 0; k < seq.ids.size(); ++k) {
            const auto& tok = vocab.token(seq.ids[k]);
            EXPECT_EQ(seq.is_continuation[k], tok.rfind("##", 0) == 0);
            joined += seq.is_continuation[k] ? tok.substr(2) : tok;
        }
        std::string lower(w);
        for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        EXPECT_EQ(joined, lower);
    }
    EXPECT_EQ(tokenize("A b, c!", vocab, true), tokenize("A b, c!", vocab, true));
}
