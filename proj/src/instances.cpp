#include "xbert/instances.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include <fmt/format.h>

#include "xbert/binary_io.hpp"
#include "xbert/error.hpp"
#include "xbert/keyed_rng.hpp"

namespace xbert {

namespace {
constexpr char kInstanceMagic[8] = {'X', 'B', 'I', 'N', 'S', 'T', '0', '1'};
}

void MaskingPolicy::check() const {
    if (!(masked_lm_prob > 0.0 && masked_lm_prob < 1.0)) {
        throw InstanceError(fmt::format("masked_lm_prob must lie in (0, 1), got {}", masked_lm_prob));
    }
    if (max_seq_length < 3 || max_seq_length > UINT16_MAX) {
        throw InstanceError(fmt::format("max_seq_length must lie in [3, 65535], got {}", max_seq_length));
    }
    if (max_predictions_per_seq > max_seq_length - 2) {
        throw InstanceError("max_predictions_per_seq must not exceed max_seq_length - 2");
    }
    if (dup_factor < 1) {
        throw InstanceError("dup_factor must be at least 1");
    }
    if (mask_token_frac < 0 || random_token_frac < 0 || keep_token_frac < 0 ||
        std::abs(mask_token_frac + random_token_frac + keep_token_frac - 1.0) > 1e-12) {
        throw InstanceError("mask/random/keep fractions must be non-negative and sum to 1");
    }
}

std::uint32_t MaskingPolicy::predictions_for(std::size_t window_length) const noexcept {
    const auto rounded = static_cast<std::uint32_t>(std::lround(masked_lm_prob * static_cast<double>(window_length)));
    const auto n = std::min(max_predictions_per_seq, std::max<std::uint32_t>(1, rounded));
    return std::min<std::uint32_t>(n, static_cast<std::uint32_t>(window_length));
}

std::uint64_t document_key(ShardId shard, std::uint32_t record_index) noexcept {
    return (static_cast<std::uint64_t>(shard.split) << 63) | (static_cast<std::uint64_t>(shard.index & 0x7fffffffu) << 32) | record_index;
}

std::vector<std::vector<TokenId>> segment_document(const TokenSequence& tokens, const MaskingPolicy& policy) {
    std::vector<std::vector<TokenId>> windows;
    const std::size_t cap = policy.window_capacity();
    for (std::size_t start = 0; start < tokens.ids.size(); start += cap) {
        const std::size_t end = std::min(tokens.ids.size(), start + cap);
        if (end - start < cap && end - start < policy.min_window) {
            break;
        }
        windows.emplace_back(tokens.ids.begin() + static_cast<std::ptrdiff_t>(start), tokens.ids.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return windows;
}

MlmInstance apply_masking(std::span<const TokenId> window, const MaskingPolicy& policy, const Vocabulary& vocab, const InstanceKey& key) {
    const std::size_t len = window.size();
    MlmInstance inst;
    inst.dup_index = key.dup_index;
    inst.input_ids.assign(policy.max_seq_length, vocab.pad_id());
    inst.input_ids[0] = vocab.cls_id();
    std::copy(window.begin(), window.end(), inst.input_ids.begin() + 1);
    inst.input_ids[len + 1] = vocab.sep_id();
    inst.attention_len = static_cast<std::uint16_t>(len + 2);

    if (len == 0) {
        return inst;
    }
    KeyedStream rng(keyed_hash(policy.seed, {static_cast<std::uint64_t>(RngDomain::masking), key.doc_key, key.window_index, key.dup_index}));

    const std::uint32_t n = policy.predictions_for(len);
    std::vector<std::uint16_t> order(len);
    std::iota(order.begin(), order.end(), std::uint16_t{0});
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto j = i + rng.below(len - i);
        std::swap(order[i], order[j]);
    }
    order.resize(n);
    std::sort(order.begin(), order.end());

    const auto& regular = vocab.regular_ids();
    for (auto idx : order) {
        const auto pos = static_cast<std::uint16_t>(idx + 1);
        inst.masked_positions.push_back(pos);
        inst.masked_labels.push_back(window[idx]);
        const double u = rng.uniform();
        if (u < policy.mask_token_frac) {
            inst.input_ids[pos] = vocab.mask_id();
        } else if (u < policy.mask_token_frac + policy.random_token_frac) {
            inst.input_ids[pos] = regular.empty() ? vocab.mask_id() : regular[rng.below(regular.size())];
        }
    }
    return inst;
}

std::string encode_instance(const MlmInstance& inst, std::uint32_t max_seq_length) {
    std::string out;
    out.reserve(max_seq_length * 4 + 4 + inst.masked_positions.size() * 6);
    for (std::uint32_t i = 0; i < max_seq_length; ++i) {
        le::put<std::uint32_t>(out, inst.input_ids[i]);
    }
    le::put<std::uint16_t>(out, inst.attention_len);
    le::put<std::uint16_t>(out, static_cast<std::uint16_t>(inst.masked_positions.size()));
    for (auto p : inst.masked_positions) {
        le::put<std::uint16_t>(out, p);
    }
    for (auto l : inst.masked_labels) {
        le::put<std::uint32_t>(out, l);
    }
    return out;
}

InstanceReader::InstanceReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) {
        throw InstanceError("cannot open instance file " + path.string());
    }
    char header[kInstanceHeaderBytes];
    read_exact(header, sizeof(header));
    if (std::memcmp(header, kInstanceMagic, sizeof(kInstanceMagic)) != 0) {
        throw InstanceError("bad instance file magic in " + path.string(), 0);
    }
    if (le::get<std::uint16_t>(header + 8) != kInstanceFormatVersion) {
        throw InstanceError("unsupported instance file version in " + path.string(), 8);
    }
    seq_len_ = le::get<std::uint16_t>(header + 10);
    count_ = le::get<std::uint32_t>(header + 12);
}

void InstanceReader::read_exact(char* dst, std::size_t n) {
    if (!in_.read(dst, static_cast<std::streamsize>(n))) {
        throw InstanceError(fmt::format("truncated instance file {} at byte offset {}", path_.string(), offset_), offset_);
    }
    offset_ += n;
}

bool InstanceReader::next(MlmInstance& out) {
    if (read_ >= count_) {
        return false;
    }
    const std::uint64_t start = offset_;
    std::string buf(seq_len_ * 4 + 4, '\0');
    read_exact(buf.data(), buf.size());
    out.input_ids.resize(seq_len_);
    for (std::uint32_t i = 0; i < seq_len_; ++i) {
        out.input_ids[i] = le::get<std::uint32_t>(buf, i * 4);
    }
    out.attention_len = le::get<std::uint16_t>(buf, seq_len_ * 4);
    const auto n = le::get<std::uint16_t>(buf, seq_len_ * 4 + 2);
    if (out.attention_len < 2 || out.attention_len > seq_len_ || n > out.attention_len) {
        throw InstanceError(fmt::format("corrupt instance header in {} at byte offset {}", path_.string(), start), start);
    }
    buf.resize(static_cast<std::size_t>(n) * 6);
    read_exact(buf.data(), buf.size());
    out.masked_positions.resize(n);
    out.masked_labels.resize(n);
    for (std::uint16_t k = 0; k < n; ++k) {
        out.masked_positions[k] = le::get<std::uint16_t>(buf, k * 2u);
        out.masked_labels[k] = le::get<std::uint32_t>(buf, n * 2u + k * 4u);
        if (out.masked_positions[k] < 1 || out.masked_positions[k] + 1 >= out.attention_len) {
            throw InstanceError(fmt::format("masked position out of range in {} at byte offset {}", path_.string(), start), start);
        }
    }
    ++read_;
    return true;
}

namespace {

void write_meta(const std::filesystem::path& out_dir, const MaskingPolicy& policy, const Vocabulary& vocab,
                const std::string& dataset_id, const InstanceFileSet& set) {
    YAML::Emitter e;
    e.SetDoublePrecision(17);
    e << YAML::BeginMap;
    e << YAML::Key << "dataset_id" << YAML::Value << dataset_id;
    e << YAML::Key << "format" << YAML::Value << "XBINST01";
    e << YAML::Key << "vocab_digest" << YAML::Value << vocab.digest();
    e << YAML::Key << "vocab_size" << YAML::Value << vocab.size();
    e << YAML::Key << "instances" << YAML::Value << set.instance_count;
    e << YAML::Key << "windows" << YAML::Value << set.window_count;
    e << YAML::Key << "policy" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "masked_lm_prob" << YAML::Value << policy.masked_lm_prob;
    e << YAML::Key << "max_predictions_per_seq" << YAML::Value << policy.max_predictions_per_seq;
    e << YAML::Key << "max_seq_length" << YAML::Value << policy.max_seq_length;
    e << YAML::Key << "dup_factor" << YAML::Value << policy.dup_factor;
    e << YAML::Key << "seed" << YAML::Value << policy.seed;
    e << YAML::Key << "mask_token_frac" << YAML::Value << policy.mask_token_frac;
    e << YAML::Key << "random_token_frac" << YAML::Value << policy.random_token_frac;
    e << YAML::Key << "keep_token_frac" << YAML::Value << policy.keep_token_frac;
    e << YAML::Key << "min_window" << YAML::Value << policy.min_window;
    e << YAML::Key << "do_lower_case" << YAML::Value << policy.do_lower_case;
    e << YAML::EndMap;
    e << YAML::Key << "files" << YAML::Value << YAML::BeginSeq;
    for (const auto& f : set.files) {
        e << f.lexically_relative(out_dir).generic_string();
    }
    e << YAML::EndSeq;
    e << YAML::EndMap;
    std::ofstream out(out_dir / "META.yaml", std::ios::binary);
    out << e.c_str() << "\n";
    if (!out) {
        throw InstanceError("cannot write " + (out_dir / "META.yaml").string());
    }
}

}  // namespace

InstanceFileSet generate_instances(const std::vector<Shard>& shards, const MaskingPolicy& policy, const Vocabulary& vocab,
                                   const std::filesystem::path& out_dir, unsigned n_workers, const std::string& dataset_id) {
    namespace fs = std::filesystem;
    policy.check();
    n_workers = std::max(1u, n_workers);
    fs::create_directories(out_dir / "train");
    fs::create_directories(out_dir / "test");

    InstanceFileSet set;
    set.root = out_dir;
    for (const auto& s : shards) {
        set.files.push_back(out_dir / shard_relpath(s.id, ".xbi"));
    }
    std::vector<std::uint64_t> instance_counts(shards.size(), 0), window_counts(shards.size(), 0);

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < shards.size();) {
            const auto& shard = shards[i];
            try {
                std::ofstream out(set.files[i], std::ios::binary | std::ios::trunc);
                if (!out) {
                    throw InstanceError("cannot create " + set.files[i].string());
                }
                std::string header(kInstanceMagic, sizeof(kInstanceMagic));
                le::put<std::uint16_t>(header, kInstanceFormatVersion);
                le::put<std::uint16_t>(header, static_cast<std::uint16_t>(policy.max_seq_length));
                le::put<std::uint32_t>(header, 0);
                out.write(header.data(), static_cast<std::streamsize>(header.size()));

                ShardReader reader(shard.path);
                std::uint64_t count = 0;
                std::uint32_t record = 0;
                for (std::string text; reader.next(text); ++record) {
                    const auto windows = segment_document(tokenize(text, vocab, policy.do_lower_case), policy);
                    window_counts[i] += windows.size();
                    for (std::uint32_t w = 0; w < windows.size(); ++w) {
                        for (std::uint32_t d = 0; d < policy.dup_factor; ++d) {
                            const auto inst = apply_masking(windows[w], policy, vocab, {document_key(shard.id, record), w, d});
                            const auto bytes = encode_instance(inst, policy.max_seq_length);
                            out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
                            ++count;
                        }
                    }
                }
                if (count > UINT32_MAX) {
                    throw InstanceError("too many instances for one file: " + set.files[i].string());
                }
                std::string patch;
                le::put<std::uint32_t>(patch, static_cast<std::uint32_t>(count));
                out.seekp(12);
                out.write(patch.data(), 4);
                out.close();
                if (!out) {
                    throw InstanceError("I/O failure writing " + set.files[i].string());
                }
                instance_counts[i] = count;
            } catch (const std::exception& e) {
                std::lock_guard lk(failure_mu);
                if (!failure) {
                    failure = std::make_exception_ptr(InstanceError(fmt::format("shard {}: {}", shard_relpath(shard.id, ""), e.what())));
                }
                return;
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        for (unsigned w = 1; w < n_workers; ++w) {
            pool.emplace_back(work);
        }
        work();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
    set.instance_count = std::accumulate(instance_counts.begin(), instance_counts.end(), std::uint64_t{0});
    set.window_count = std::accumulate(window_counts.begin(), window_counts.end(), std::uint64_t{0});
    write_meta(out_dir, policy, vocab, dataset_id, set);
    return set;
}

double MaskRateReport::mean_mask_fraction() const noexcept {
    return non_special_tokens == 0 ? 0.0 : static_cast<double>(masked_positions) / static_cast<double>(non_special_tokens);
}
double MaskRateReport::mask_fraction() const noexcept {
    return masked_positions == 0 ? 0.0 : static_cast<double>(mask_actions) / static_cast<double>(masked_positions);
}
double MaskRateReport::random_fraction() const noexcept {
    return masked_positions == 0 ? 0.0 : static_cast<double>(random_actions) / static_cast<double>(masked_positions);
}
double MaskRateReport::keep_fraction() const noexcept {
    return masked_positions == 0 ? 0.0 : static_cast<double>(keep_actions) / static_cast<double>(masked_positions);
}

MaskRateReport mask_rate_report(const std::vector<std::filesystem::path>& files, TokenId mask_id) {
    MaskRateReport r;
    MlmInstance inst;
    for (const auto& f : files) {
        InstanceReader reader(f);
        while (reader.next(inst)) {
            ++r.instance_count;
            r.non_special_tokens += inst.attention_len - 2u;
            r.masked_positions += inst.masked_positions.size();
            r.max_masked_per_instance = std::max<std::uint32_t>(r.max_masked_per_instance, static_cast<std::uint32_t>(inst.masked_positions.size()));
            for (std::size_t k = 0; k < inst.masked_positions.size(); ++k) {
                const TokenId shown = inst.input_ids[inst.masked_positions[k]];
                if (shown == mask_id) {
                    ++r.mask_actions;
                } else if (shown == inst.masked_labels[k]) {
                    ++r.keep_actions;
                } else {
                    ++r.random_actions;
                }
            }
        }
    }
    return r;
}

}  // namespace xbert
