#include "support.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "xbert/keyed_rng.hpp"

#ifndef XBERT_FIXTURE_DIR
#error "XBERT_FIXTURE_DIR must be defined"
#endif

namespace xbert::testing {

TempDir::TempDir(std::string_view tag) {
    std::string templ = (fs::temp_directory_path() / fmt::format("xbert-{}-XXXXXX", tag)).string();
    if (!::mkdtemp(templ.data())) {
        throw std::runtime_error("mkdtemp failed");
    }
    path_ = templ;
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

fs::path fixture(std::string_view name) { return fs::path(XBERT_FIXTURE_DIR) / std::string(name); }

void write_text(const fs::path& path, std::string_view text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) {
        throw std::runtime_error("cannot write " + path.string());
    }
}

std::string read_text(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string read_bytes_of_tree(const fs::path& root) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) {
            files.push_back(fs::relative(e.path(), root));
        }
    }
    std::sort(files.begin(), files.end());
    std::string out;
    for (const auto& f : files) {
        out += f.generic_string() + "\n" + to_hex(sha256_file(root / f)) + "\n";
    }
    return out;
}

std::vector<std::string> make_words(std::size_t count, std::uint64_t seed) {
    static const char* syl[] = {"ka", "lo", "mi", "nu", "pe", "ra", "si", "to", "ve", "zu", "an", "el", "in", "or", "ub",
                                "sta", "tri", "pla", "gro", "ble", "ch", "sh", "th", "qu", "ix", "er", "ing", "ed", "ly", "on"};
    constexpr std::size_t n_syl = sizeof(syl) / sizeof(syl[0]);
    KeyedStream rng(keyed_hash(seed, {0x776f726473ULL}));
    std::set<std::string> seen;
    std::vector<std::string> out;
    while (out.size() < count) {
        std::string w;
        const auto parts = 1 + rng.below(4);
        for (std::uint64_t p = 0; p < parts; ++p) {
            w += syl[rng.below(n_syl)];
        }
        if (seen.insert(w).second) {
            out.push_back(w);
        }
    }
    return out;
}

std::vector<std::string> vocab_lines(const std::vector<std::string>& words) {
    std::vector<std::string> lines{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    std::set<std::string> seen(lines.begin(), lines.end());
    auto add = [&](const std::string& t) {
        if (seen.insert(t).second) {
            lines.push_back(t);
        }
    };
    for (char c : std::string(".,;:!?'\"()-")) {
        add(std::string(1, c));
    }
    for (const auto& w : words) {
        add(w);
    }
    for (char c = 'a'; c <= 'z'; ++c) {
        add(std::string(1, c));
        add("##" + std::string(1, c));
    }
    for (const char* piece : {"##ing", "##ed", "##er", "##ly", "##on", "##ka", "##lo", "##mi"}) {
        add(piece);
    }
    return lines;
}

fs::path write_vocab(const fs::path& path, const std::vector<std::string>& words) {
    std::string text;
    for (const auto& l : vocab_lines(words)) {
        text += l + "\n";
    }
    write_text(path, text);
    return path;
}

CorpusInfo write_corpus(const fs::path& dir, const CorpusSpec& spec) {
    fs::create_directories(dir);
    CorpusInfo info;
    info.words = make_words(3000, spec.seed);
    const auto oov = make_words(3500, spec.seed ^ 0x5a5aULL);
    KeyedStream rng(keyed_hash(spec.seed, {0x636f72707573ULL}));
    static const char* punct[] = {".", ",", ";", "!", "?", ":"};

    const std::uint64_t per_file = spec.target_bytes / spec.files + 1;
    std::string buf;
    std::string article;
    for (std::size_t f = 0; f < spec.files; ++f) {
        const fs::path path = dir / fmt::format("part-{:03}.txt", f);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        std::uint64_t file_bytes = 0;
        while (file_bytes < per_file) {
            article.clear();
            const auto n_words = spec.min_words + rng.below(spec.max_words - spec.min_words + 1);
            for (std::size_t w = 0; w < n_words; ++w) {
                const bool line_start = w % spec.words_per_line == 0;
                if (w > 0) {
                    article += line_start ? '\n' : ' ';
                }
                std::string word = rng.uniform() < spec.oov_fraction ? oov[rng.below(oov.size())] : info.words[rng.below(info.words.size())];
                if (rng.below(8) == 0) {
                    word[0] = static_cast<char>(word[0] - 'a' + 'A');
                }
                article += word;
                if (rng.below(10) == 0) {
                    article += punct[rng.below(6)];
                }
            }
            info.article_digests.push_back(sha256(article));
            buf += article;
            buf += "\n\n";
            file_bytes += article.size() + 2;
            if (buf.size() > (1 << 22)) {
                out << buf;
                buf.clear();
            }
        }
        out << buf;
        buf.clear();
        if (!out) {
            throw std::runtime_error("cannot write " + path.string());
        }
        info.bytes += file_bytes;
        info.files.push_back(path);
    }
    std::sort(info.article_digests.begin(), info.article_digests.end());
    return info;
}

}  // namespace xbert::testing
