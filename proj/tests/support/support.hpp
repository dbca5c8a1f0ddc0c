#pragma once

// Shared helpers for the unit and acceptance suites.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "xbert/digest.hpp"
#include "xbert/tokenizer.hpp"

namespace xbert::testing {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(std::string_view tag = "t");
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const noexcept { return path_; }
    fs::path operator/(const fs::path& p) const { return path_ / p; }

private:
    fs::path path_;
};

fs::path fixture(std::string_view name);
void write_text(const fs::path& path, std::string_view text);
std::string read_text(const fs::path& path);
std::string read_bytes_of_tree(const fs::path& root);  // relative path + content of every file, sorted

/// Pseudo-words built from syllables; deterministic for a seed.
std::vector<std::string> make_words(std::size_t count, std::uint64_t seed);

/// Vocabulary lines: specials, then `words`, then single letters and "##" letters so
/// every lower-case ASCII word is representable.
std::vector<std::string> vocab_lines(const std::vector<std::string>& words);
fs::path write_vocab(const fs::path& path, const std::vector<std::string>& words);

struct CorpusSpec {
    std::uint64_t target_bytes = 1 << 20;
    std::size_t files = 4;
    std::uint64_t seed = 7;
    std::size_t min_words = 20;
    std::size_t max_words = 900;
    std::size_t words_per_line = 14;
    /// Fraction of words drawn outside the vocabulary list (exercise word pieces).
    double oov_fraction = 0.05;
};

struct CorpusInfo {
    std::vector<fs::path> files;
    std::uint64_t bytes = 0;
    std::vector<Sha256Digest> article_digests;  // sorted
    std::vector<std::string> words;             // in-vocabulary words
};

/// Writes articles (blank-line separated, mixed-case words plus punctuation) under `dir`
/// until `target_bytes` is reached. Digests are computed from the exact article text
/// the corpus reader should reconstruct.
CorpusInfo write_corpus(const fs::path& dir, const CorpusSpec& spec);

}  // namespace xbert::testing
