#pragma once

// Memory-bounded shuffle + shard.
//
// Documents are routed to a split and a shard by keyed hashes of
// (seed, doc_id), buffered per destination shard, and spilled to per-shard
// files whenever the buffered byte count would exceed 80% of the budget.
// Each output shard is then written in the order of a keyed sort key, so
// the produced files depend only on (corpus, plan) and never on arrival
// order or worker count.
//
// Shard file (.xbs), little-endian:
//   "XBSHARD1" | u16 version | u32 record count | 2 bytes zero padding
//   then per record: u32 byte length | UTF-8 text

#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xbert/corpus.hpp"

namespace xbert {

enum class Split : std::uint8_t { train = 0, test = 1 };
std::string_view split_name(Split s) noexcept;

constexpr std::uint64_t kMiB = std::uint64_t{1} << 20;
constexpr std::uint64_t kGiB = std::uint64_t{1} << 30;
/// Budgets below this refuse to start.
constexpr std::uint64_t kMinMemoryBudget = 16 * kMiB;
/// Accounted per buffered record on top of its text bytes.
constexpr std::uint64_t kRecordOverhead = 64;
constexpr std::uint16_t kShardFormatVersion = 1;
constexpr std::size_t kShardHeaderBytes = 16;

struct ShardPlan {
    std::uint32_t num_train_shards = 256;
    std::uint32_t num_test_shards = 128;
    double frac_test = 0.005;
    std::uint64_t max_memory_bytes = 64 * kGiB;
    std::uint64_t seed = 42;

    static std::uint64_t budget_from_gb(double gigabytes);
    /// Throws ShardError when a count is zero, frac_test is outside [0, 1), or the budget is below the floor.
    void check() const;
    std::uint32_t shard_count(Split s) const noexcept { return s == Split::train ? num_train_shards : num_test_shards; }
};

struct ShardId {
    Split split = Split::train;
    std::uint32_t index = 0;
    auto operator<=>(const ShardId&) const = default;
};

/// Relative path of a shard file, e.g. "train/shard-00007.xbs".
std::string shard_relpath(ShardId id, std::string_view extension);

/// An on-disk shard. Documents are read on demand through ShardReader.
struct Shard {
    ShardId id;
    std::filesystem::path path;
    std::uint32_t record_count = 0;
    std::string checksum;  // SHA-256 hex of the whole file

    std::vector<std::string> read_texts() const;
};

class ShardReader {
public:
    /// Throws ShardError on a bad header.
    explicit ShardReader(const std::filesystem::path& path);
    std::uint32_t record_count() const noexcept { return count_; }
    /// False once all records have been read. Throws ShardError on truncation.
    bool next(std::string& text);

private:
    std::filesystem::path path_;
    std::ifstream in_;
    std::uint32_t count_ = 0;
    std::uint32_t read_ = 0;
};

Split assign_split(std::uint64_t doc_id, const ShardPlan& plan) noexcept;
inline Split assign_split(const DocumentRecord& doc, const ShardPlan& plan) noexcept { return assign_split(doc.doc_id, plan); }
std::uint32_t assign_shard(std::uint64_t doc_id, Split split, const ShardPlan& plan) noexcept;
/// Position key of a document inside its shard (ties broken by doc_id).
std::uint64_t order_key(std::uint64_t doc_id, const ShardPlan& plan) noexcept;

struct ShardStats {
    std::uint64_t documents = 0;
    std::uint64_t text_bytes = 0;
    /// High-water mark of the byte accounting (texts + kRecordOverhead per record).
    std::uint64_t peak_accounted_bytes = 0;
    std::uint64_t spill_events = 0;
    std::uint64_t spilled_bytes = 0;
};

struct ShardResult {
    std::vector<Shard> shards;  // train shards by index, then test shards by index
    ShardStats stats;
};

/// Pulls the next document; returns false at end of stream. Called under a lock.
using DocumentSource = std::function<bool(DocumentRecord&)>;

/// Writes `<out_dir>/{train,test}/shard-NNNNN.xbs` and `<out_dir>/MANIFEST.tsv`.
/// Throws ShardError for a document larger than the budget or a failed spill write.
ShardResult shuffle_and_shard(const DocumentSource& docs, const ShardPlan& plan, const std::filesystem::path& spill_dir,
                              const std::filesystem::path& out_dir, unsigned workers = 1);

/// Reloads the shard list recorded in `<out_dir>/MANIFEST.tsv`.
std::vector<Shard> read_manifest(const std::filesystem::path& out_dir);

/// `override` when given, else the first 16 hex digits of SHA-256 over the sorted shard checksums.
std::string dataset_id(const std::vector<Shard>& shards, const std::optional<std::string>& override = std::nullopt);

}  // namespace xbert
