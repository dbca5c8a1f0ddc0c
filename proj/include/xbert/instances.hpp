#pragma once

// Static (pre-)masking of sharded documents into fixed-length MLM instances.
//
// Instance file (.xbi), little-endian:
//   "XBINST01" | u16 version | u16 max_seq_length | u32 instance count
//   per instance:
//     u32 input_ids[max_seq_length] | u16 attention_len | u16 n_masked
//     u16 masked_positions[n_masked] | u32 masked_labels[n_masked]

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "xbert/shard.hpp"
#include "xbert/tokenizer.hpp"

namespace xbert {

constexpr std::uint16_t kInstanceFormatVersion = 1;
constexpr std::size_t kInstanceHeaderBytes = 16;

struct MaskingPolicy {
    double masked_lm_prob = 0.15;
    std::uint32_t max_predictions_per_seq = 20;
    std::uint32_t max_seq_length = 128;
    std::uint32_t dup_factor = 10;
    std::uint64_t seed = 42;
    double mask_token_frac = 0.8;
    double random_token_frac = 0.1;
    double keep_token_frac = 0.1;
    /// A document's trailing window shorter than this is dropped.
    std::uint32_t min_window = 8;
    bool do_lower_case = true;

    /// Throws InstanceError when an invariant does not hold.
    void check() const;
    std::uint32_t window_capacity() const noexcept { return max_seq_length - 2; }
    /// min(cap, max(1, round(prob * len))), never more than len.
    std::uint32_t predictions_for(std::size_t window_length) const noexcept;
};

struct MlmInstance {
    std::vector<TokenId> input_ids;
    std::uint16_t attention_len = 0;
    std::vector<std::uint16_t> masked_positions;
    std::vector<TokenId> masked_labels;
    std::uint32_t dup_index = 0;  // not serialized; implied by file order
    bool operator==(const MlmInstance&) const = default;
};

/// Identifies one masking draw: which document, which window, which duplicate.
struct InstanceKey {
    std::uint64_t doc_key = 0;
    std::uint32_t window_index = 0;
    std::uint32_t dup_index = 0;
};

/// Injective key of a document from its position in the shard layout.
std::uint64_t document_key(ShardId shard, std::uint32_t record_index) noexcept;

/// Consecutive windows of at most max_seq_length - 2 ids; a short final window survives only if it has min_window ids.
std::vector<std::vector<TokenId>> segment_document(const TokenSequence& tokens, const MaskingPolicy& policy);

MlmInstance apply_masking(std::span<const TokenId> window, const MaskingPolicy& policy, const Vocabulary& vocab, const InstanceKey& key);

std::string encode_instance(const MlmInstance& inst, std::uint32_t max_seq_length);

class InstanceReader {
public:
    /// Throws InstanceError on a bad header.
    explicit InstanceReader(const std::filesystem::path& path);
    std::uint32_t instance_count() const noexcept { return count_; }
    std::uint32_t max_seq_length() const noexcept { return seq_len_; }
    /// False once every instance has been read. Throws InstanceError (with byte offset) on corruption.
    bool next(MlmInstance& out);

private:
    void read_exact(char* dst, std::size_t n);

    std::filesystem::path path_;
    std::ifstream in_;
    std::uint32_t count_ = 0;
    std::uint32_t seq_len_ = 0;
    std::uint32_t read_ = 0;
    std::uint64_t offset_ = 0;
};

struct InstanceFileSet {
    std::filesystem::path root;
    std::vector<std::filesystem::path> files;  // mirrors the shard list order
    std::uint64_t instance_count = 0;
    std::uint64_t window_count = 0;
};

/// Writes `<out_dir>/{train,test}/shard-NNNNN.xbi` and `<out_dir>/META.yaml`.
/// Output bytes do not depend on `n_workers`.
InstanceFileSet generate_instances(const std::vector<Shard>& shards, const MaskingPolicy& policy, const Vocabulary& vocab,
                                   const std::filesystem::path& out_dir, unsigned n_workers, const std::string& dataset_id);

struct MaskRateReport {
    std::uint64_t instance_count = 0;
    std::uint64_t non_special_tokens = 0;
    std::uint64_t masked_positions = 0;
    std::uint64_t mask_actions = 0;
    std::uint64_t random_actions = 0;
    std::uint64_t keep_actions = 0;
    std::uint32_t max_masked_per_instance = 0;

    double mean_mask_fraction() const noexcept;
    double mask_fraction() const noexcept;
    double random_fraction() const noexcept;
    double keep_fraction() const noexcept;
};

/// Aggregates masking statistics. A masked position showing [MASK] counts as a
/// mask action, one showing its original label as keep, anything else as random.
MaskRateReport mask_rate_report(const std::vector<std::filesystem::path>& files, TokenId mask_id);

}  // namespace xbert
