#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "xbert/config.hpp"

namespace xbert {

namespace fs = std::filesystem;

/// One article of raw text. `text` is non-empty and has no leading or trailing blank lines.
struct DocumentRecord {
    std::uint64_t doc_id = 0;
    std::string source;
    std::string text;
    bool operator==(const DocumentRecord&) const = default;
};

enum class SourceKind { local_directory, remote_dataset };

struct CorpusSource {
    SourceKind kind = SourceKind::local_directory;
    std::string path;        // local_directory
    RemoteDataset remote;    // remote_dataset

    std::string label() const;
};

/// Customized directories first, then remote datasets, each in config order.
std::vector<CorpusSource> corpus_sources(const DatasetConfig& dataset);

/// All regular files below `directory`, sorted by relative path. Throws IngestError.
std::vector<fs::path> scan_local(const fs::path& directory);

/// True for lines made only of ASCII whitespace (including the empty line).
bool is_blank_line(std::string_view line) noexcept;

/// Offset of the first byte that is not part of a well-formed UTF-8 sequence.
std::optional<std::size_t> find_invalid_utf8(std::string_view bytes) noexcept;

/// Splits on runs of blank lines. doc_id is left 0; callers assign ids.
/// Throws IngestError (with byte offset) on invalid UTF-8.
std::vector<DocumentRecord> split_articles(std::string_view file_text, const std::string& source);

/// Incremental form of split_articles: feed arbitrary byte chunks, articles are
/// emitted as soon as their closing blank line is seen.
class ArticleSplitter {
public:
    using Sink = std::function<void(std::string&&)>;

    explicit ArticleSplitter(Sink sink) : sink_(std::move(sink)) {}

    void feed(std::string_view chunk);
    void finish();
    std::uint64_t bytes_consumed() const noexcept { return offset_; }

private:
    void take_line(std::string_view line);
    void flush_article();

    Sink sink_;
    std::string partial_;
    std::string article_;
    std::uint64_t offset_ = 0;
};

/// Unique per (seed, file_index, article_index): an injective packing passed through a bijective mixer.
std::uint64_t make_doc_id(std::uint64_t seed, std::uint64_t file_index, std::uint64_t article_index);

struct CorpusFile {
    fs::path path;
    std::string source;
};

/// Resolves every source to its ordered file list. Remote sources must already be materialized.
std::vector<CorpusFile> list_corpus_files(const std::vector<CorpusSource>& sources, const fs::path& cache_dir);

/// Streams documents file by file without holding a whole file in memory.
class CorpusReader {
public:
    CorpusReader(std::vector<CorpusFile> files, std::uint64_t seed, std::size_t chunk_bytes = 1 << 20);
    CorpusReader(CorpusReader&&) = delete;

    /// Next document in (file order, in-file order); false at end of corpus.
    bool next(DocumentRecord& out);

    std::uint64_t bytes_read() const noexcept { return bytes_read_; }

private:
    std::vector<CorpusFile> files_;
    std::uint64_t seed_;
    std::size_t chunk_bytes_;
    std::size_t file_index_ = 0;
    std::uint64_t article_index_ = 0;
    std::ifstream current_;
    bool file_open_ = false;
    std::optional<ArticleSplitter> splitter_;
    std::deque<DocumentRecord> pending_;
    std::string buffer_;
    std::uint64_t bytes_read_ = 0;
};

struct FetchStats {
    std::size_t http_requests = 0;
};

/// Materializes `<cache_dir>/<name>/<split>/` from `<base_url>/<name>/<split>/INDEX`
/// and the files it lists. A completed cache entry is returned without any request.
/// Throws FetchError: retryable for transport errors and 5xx, permanent otherwise.
fs::path fetch_remote(const RemoteDataset& dataset, const fs::path& cache_dir,
                      const std::optional<std::string>& base_url, FetchStats* stats = nullptr);

fs::path remote_cache_dir(const RemoteDataset& dataset, const fs::path& cache_dir);

}  // namespace xbert
