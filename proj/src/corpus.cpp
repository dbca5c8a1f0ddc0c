#include "xbert/corpus.hpp"

#include <httplib.h>

#include <algorithm>
#include <sstream>

#include <fmt/format.h>

#include "xbert/error.hpp"
#include "xbert/keyed_rng.hpp"

namespace xbert {

std::string CorpusSource::label() const {
    if (kind == SourceKind::local_directory) {
        return path;
    }
    return remote.name + "/" + remote.split;
}

std::vector<CorpusSource> corpus_sources(const DatasetConfig& dataset) {
    std::vector<CorpusSource> out;
    for (const auto& dir : dataset.customized_datasets) {
        out.push_back({SourceKind::local_directory, dir, {}});
    }
    for (const auto& remote : dataset.huggingface_datasets) {
        out.push_back({SourceKind::remote_dataset, {}, remote});
    }
    return out;
}

std::vector<fs::path> scan_local(const fs::path& directory) {
    std::error_code ec;
    if (!fs::is_directory(directory, ec)) {
        throw IngestError("corpus directory does not exist or is not a directory: " + directory.string());
    }
    std::vector<fs::path> rel;
    fs::recursive_directory_iterator it(directory, fs::directory_options::none, ec);
    if (ec) {
        throw IngestError(fmt::format("cannot read corpus directory {}: {}", directory.string(), ec.message()));
    }
    for (const auto& entry : it) {
        if (entry.is_regular_file()) {
            rel.push_back(entry.path().lexically_relative(directory));
        }
    }
    std::sort(rel.begin(), rel.end(), [](const fs::path& a, const fs::path& b) { return a.generic_string() < b.generic_string(); });
    std::vector<fs::path> out;
    out.reserve(rel.size());
    for (auto& r : rel) {
        out.push_back(directory / r);
    }
    return out;
}

bool is_blank_line(std::string_view line) noexcept {
    return std::all_of(line.begin(), line.end(), [](char c) {
        return c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f';
    });
}

std::optional<std::size_t> find_invalid_utf8(std::string_view bytes) noexcept {
    const auto* s = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::size_t n = bytes.size();
    std::size_t i = 0;
    while (i < n) {
        const unsigned char c = s[i];
        if (c < 0x80) {
            ++i;
            continue;
        }
        std::size_t len = 0;
        unsigned char lo = 0x80, hi = 0xbf;
        if (c >= 0xc2 && c <= 0xdf) {
            len = 2;
        } else if (c >= 0xe0 && c <= 0xef) {
            len = 3;
            if (c == 0xe0) lo = 0xa0;       // overlong
            if (c == 0xed) hi = 0x9f;       // surrogates
        } else if (c >= 0xf0 && c <= 0xf4) {
            len = 4;
            if (c == 0xf0) lo = 0x90;       // overlong
            if (c == 0xf4) hi = 0x8f;       // > U+10FFFF
        } else {
            return i;
        }
        if (i + len > n) {
            return i;
        }
        if (s[i + 1] < lo || s[i + 1] > hi) {
            return i;
        }
        for (std::size_t k = 2; k < len; ++k) {
            if (s[i + k] < 0x80 || s[i + k] > 0xbf) {
                return i;
            }
        }
        i += len;
    }
    return std::nullopt;
}

void ArticleSplitter::feed(std::string_view chunk) {
    while (!chunk.empty()) {
        const auto nl = chunk.find('\n');
        if (nl == std::string_view::npos) {
            partial_.append(chunk);
            return;
        }
        if (partial_.empty()) {
            take_line(chunk.substr(0, nl));
        } else {
            partial_.append(chunk.substr(0, nl));
            std::string line = std::move(partial_);
            partial_.clear();
            take_line(line);
        }
        ++offset_;  // the newline itself
        chunk.remove_prefix(nl + 1);
    }
}

void ArticleSplitter::finish() {
    if (!partial_.empty()) {
        std::string line = std::move(partial_);
        partial_.clear();
        take_line(line);
    }
    flush_article();
}

void ArticleSplitter::take_line(std::string_view line) {
    if (auto bad = find_invalid_utf8(line)) {
        throw IngestError(fmt::format("invalid UTF-8 at byte offset {}", offset_ + *bad));
    }
    offset_ += line.size();
    if (!line.empty() && line.back() == '\r') {
        line.remove_suffix(1);
    }
    if (is_blank_line(line)) {
        flush_article();
        return;
    }
    if (!article_.empty()) {
        article_.push_back('\n');
    }
    article_.append(line);
}

void ArticleSplitter::flush_article() {
    if (!article_.empty()) {
        std::string done = std::move(article_);
        article_.clear();
        sink_(std::move(done));
    }
}

std::vector<DocumentRecord> split_articles(std::string_view file_text, const std::string& source) {
    std::vector<DocumentRecord> out;
    ArticleSplitter splitter([&](std::string&& text) { out.push_back({0, source, std::move(text)}); });
    splitter.feed(file_text);
    splitter.finish();
    return out;
}

std::uint64_t make_doc_id(std::uint64_t seed, std::uint64_t file_index, std::uint64_t article_index) {
    constexpr std::uint64_t kArticleBits = 40;
    if (file_index >= (std::uint64_t{1} << (64 - kArticleBits)) || article_index >= (std::uint64_t{1} << kArticleBits)) {
        throw IngestError("corpus too large for document id packing");
    }
    const std::uint64_t packed = (file_index << kArticleBits) | article_index;
    return mix64(packed ^ keyed_hash(seed, {static_cast<std::uint64_t>(RngDomain::document)}));
}

std::vector<CorpusFile> list_corpus_files(const std::vector<CorpusSource>& sources, const fs::path& cache_dir) {
    std::vector<CorpusFile> out;
    for (const auto& src : sources) {
        const fs::path dir = src.kind == SourceKind::local_directory ? fs::path(src.path) : remote_cache_dir(src.remote, cache_dir);
        for (auto& p : scan_local(dir)) {
            out.push_back({std::move(p), src.label()});
        }
    }
    return out;
}

CorpusReader::CorpusReader(std::vector<CorpusFile> files, std::uint64_t seed, std::size_t chunk_bytes)
    : files_(std::move(files)), seed_(seed), chunk_bytes_(chunk_bytes) {}

bool CorpusReader::next(DocumentRecord& out) {
    while (pending_.empty()) {
        if (!file_open_) {
            if (file_index_ >= files_.size()) {
                return false;
            }
            current_ = std::ifstream(files_[file_index_].path, std::ios::binary);
            if (!current_) {
                throw IngestError("cannot open corpus file " + files_[file_index_].path.string());
            }
            file_open_ = true;
            article_index_ = 0;
            splitter_.emplace([this](std::string&& text) {
                pending_.push_back({make_doc_id(seed_, file_index_, article_index_++), files_[file_index_].source, std::move(text)});
            });
        }
        buffer_.resize(chunk_bytes_);
        current_.read(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
        const auto got = static_cast<std::size_t>(current_.gcount());
        bytes_read_ += got;
        try {
            splitter_->feed(std::string_view(buffer_.data(), got));
            if (got < buffer_.size()) {
                splitter_->finish();
                current_.close();
                file_open_ = false;
                ++file_index_;
            }
        } catch (const IngestError& e) {
            throw IngestError(files_[file_index_].path.string() + ": " + e.what());
        }
    }
    out = std::move(pending_.front());
    pending_.pop_front();
    return true;
}

// ---------------------------------------------------------------------------
// Remote corpora

namespace {

struct ParsedUrl {
    std::string scheme_host_port;
    std::string path_prefix;
};

ParsedUrl parse_base_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos || url.substr(0, scheme_end) != "http") {
        throw FetchError("remote corpus base URL must be http://host[:port][/prefix], got " + url, false);
    }
    const auto path_start = url.find('/', scheme_end + 3);
    ParsedUrl out;
    out.scheme_host_port = url.substr(0, path_start);
    out.path_prefix = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!out.path_prefix.empty() && out.path_prefix.back() == '/') {
        out.path_prefix.pop_back();
    }
    return out;
}

std::string http_get(httplib::Client& client, const std::string& path, FetchStats* stats) {
    if (stats != nullptr) {
        ++stats->http_requests;
    }
    auto res = client.Get(path);
    if (!res) {
        throw FetchError(fmt::format("GET {} failed: {}", path, httplib::to_string(res.error())), true);
    }
    if (res->status == 404) {
        throw FetchError(fmt::format("GET {}: not found", path), false);
    }
    if (res->status >= 500) {
        throw FetchError(fmt::format("GET {}: server error {}", path, res->status), true);
    }
    if (res->status != 200) {
        throw FetchError(fmt::format("GET {}: status {}", path, res->status), false);
    }
    return res->body;
}

bool safe_file_name(const std::string& name) {
    return !name.empty() && name != "." && name != ".." && name.find('/') == std::string::npos && name.find('\\') == std::string::npos;
}

}  // namespace

fs::path remote_cache_dir(const RemoteDataset& dataset, const fs::path& cache_dir) {
    return cache_dir / dataset.name / dataset.split;
}

fs::path fetch_remote(const RemoteDataset& dataset, const fs::path& cache_dir, const std::optional<std::string>& base_url,
                      FetchStats* stats) {
    const fs::path target = remote_cache_dir(dataset, cache_dir);
    const fs::path marker = cache_dir / dataset.name / (dataset.split + ".complete");
    if (fs::exists(marker) && fs::is_directory(target)) {
        return target;
    }
    if (!base_url || base_url->empty()) {
        throw FetchError(fmt::format("remote dataset {}/{} is not cached and no remote endpoint is configured", dataset.name, dataset.split),
                         false);
    }
    if (!safe_file_name(dataset.name) || !safe_file_name(dataset.split)) {
        throw FetchError(fmt::format("invalid remote dataset name {}/{}", dataset.name, dataset.split), false);
    }

    const auto url = parse_base_url(*base_url);
    httplib::Client client(url.scheme_host_port);
    client.set_connection_timeout(10);
    client.set_read_timeout(60);
    const std::string prefix = fmt::format("{}/{}/{}/", url.path_prefix, dataset.name, dataset.split);

    const std::string index = http_get(client, prefix + "INDEX", stats);
    std::vector<std::string> names;
    std::istringstream lines(index);
    for (std::string line; std::getline(lines, line);) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        if (!safe_file_name(line)) {
            throw FetchError("remote index lists an unsafe file name: " + line, false);
        }
        names.push_back(line);
    }

    const fs::path staging = cache_dir / dataset.name / (dataset.split + ".partial");
    fs::remove_all(staging);
    fs::create_directories(staging);
    for (const auto& name : names) {
        const auto body = http_get(client, prefix + name, stats);
        std::ofstream out(staging / name, std::ios::binary);
        out.write(body.data(), static_cast<std::streamsize>(body.size()));
        if (!out) {
            throw FetchError("cannot write cache file " + (staging / name).string(), false);
        }
    }
    fs::remove_all(target);
    fs::rename(staging, target);
    std::ofstream(marker) << names.size() << "\n";
    return target;
}

}  // namespace xbert
