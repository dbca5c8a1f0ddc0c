#include "xbert/shard.hpp"

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <condition_variable>
#include <cstdio>
#include <cstring>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "xbert/binary_io.hpp"
#include "xbert/digest.hpp"
#include "xbert/error.hpp"
#include "xbert/keyed_rng.hpp"

namespace xbert {

namespace {

constexpr char kShardMagic[8] = {'X', 'B', 'S', 'H', 'A', 'R', 'D', '1'};
constexpr double kSpillTrigger = 0.8;
constexpr double kSpillTarget = 0.5;

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f != nullptr) {
            std::fclose(f);
        }
    }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::filesystem::path& p, const char* mode) {
    File f(std::fopen(p.c_str(), mode));
    if (!f) {
        throw ShardError(fmt::format("cannot open {}: {}", p.string(), std::strerror(errno)));
    }
    return f;
}

void write_all(std::FILE* f, std::string_view bytes, const std::filesystem::path& p, bool flush = false) {
    if (std::fwrite(bytes.data(), 1, bytes.size(), f) != bytes.size() || (flush && std::fflush(f) != 0)) {
        const int err = errno;
        throw ShardError(fmt::format("write to {} failed ({}); {} bytes needed", p.string(), std::strerror(err), bytes.size()));
    }
}

// Byte accounting shared by the distribution and finalize phases.
class MemoryAccount {
public:
    explicit MemoryAccount(std::uint64_t budget) : budget_(budget) {}

    std::uint64_t used() const noexcept { return used_; }
    std::uint64_t peak() const noexcept { return peak_; }
    std::uint64_t budget() const noexcept { return budget_; }

    // Caller holds the distribution lock.
    void add_locked(std::uint64_t n) {
        used_ += n;
        peak_ = std::max(peak_, used_);
    }
    void release_locked(std::uint64_t n) { used_ -= n; }

    // Blocks until `n` bytes fit under the budget.
    void reserve(std::uint64_t n) {
        if (n > budget_) {
            throw ShardError(fmt::format("operation needs {} accounted bytes, more than the whole budget of {}", n, budget_));
        }
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return used_ + n <= budget_; });
        add_locked(n);
    }
    void release(std::uint64_t n) {
        {
            std::lock_guard lk(mu_);
            release_locked(n);
        }
        cv_.notify_all();
    }

private:
    std::uint64_t budget_;
    std::uint64_t used_ = 0;
    std::uint64_t peak_ = 0;
    std::mutex mu_;
    std::condition_variable cv_;
};

// Spill record: u64 doc_id | u32 length | text.
struct Buffer {
    std::string bytes;
    std::uint64_t accounted = 0;
};

struct IndexEntry {
    std::uint64_t key;
    std::uint64_t doc_id;
    std::uint64_t offset;  // of the text inside the spill file
    std::uint32_t length;
};

std::string shard_header(std::uint32_t count) {
    std::string h(kShardMagic, sizeof(kShardMagic));
    le::put<std::uint16_t>(h, kShardFormatVersion);
    le::put<std::uint32_t>(h, count);
    h.append(2, '\0');
    return h;
}

}  // namespace

std::string_view split_name(Split s) noexcept { return s == Split::train ? "train" : "test"; }

std::uint64_t ShardPlan::budget_from_gb(double gigabytes) {
    return static_cast<std::uint64_t>(gigabytes * static_cast<double>(kGiB));
}

void ShardPlan::check() const {
    if (num_train_shards < 1 || num_test_shards < 1) {
        throw ShardError("shard counts must be at least 1");
    }
    if (!(frac_test >= 0.0 && frac_test < 1.0)) {
        throw ShardError(fmt::format("frac_test must lie in [0, 1), got {}", frac_test));
    }
    if (max_memory_bytes < kMinMemoryBudget) {
        throw ShardError(fmt::format("memory budget {} bytes is below the {} byte floor", max_memory_bytes, kMinMemoryBudget));
    }
}

std::string shard_relpath(ShardId id, std::string_view extension) {
    return fmt::format("{}/shard-{:05d}{}", split_name(id.split), id.index, extension);
}

Split assign_split(std::uint64_t doc_id, const ShardPlan& plan) noexcept {
    const double u = to_unit(keyed_hash(plan.seed, {static_cast<std::uint64_t>(RngDomain::split), doc_id}));
    return u < plan.frac_test ? Split::test : Split::train;
}

std::uint32_t assign_shard(std::uint64_t doc_id, Split split, const ShardPlan& plan) noexcept {
    KeyedStream s(keyed_hash(plan.seed, {static_cast<std::uint64_t>(RngDomain::shard), doc_id}));
    return static_cast<std::uint32_t>(s.below(plan.shard_count(split)));
}

std::uint64_t order_key(std::uint64_t doc_id, const ShardPlan& plan) noexcept {
    return keyed_hash(plan.seed, {static_cast<std::uint64_t>(RngDomain::order), doc_id});
}

ShardReader::ShardReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) {
        throw ShardError("cannot open shard " + path.string());
    }
    char header[kShardHeaderBytes];
    if (!in_.read(header, sizeof(header))) {
        throw ShardError("truncated shard header in " + path.string());
    }
    if (std::memcmp(header, kShardMagic, sizeof(kShardMagic)) != 0) {
        throw ShardError("bad shard magic in " + path.string());
    }
    const auto version = le::get<std::uint16_t>(header + 8);
    if (version != kShardFormatVersion) {
        throw ShardError(fmt::format("unsupported shard format version {} in {}", version, path.string()));
    }
    count_ = le::get<std::uint32_t>(header + 10);
}

bool ShardReader::next(std::string& text) {
    if (read_ >= count_) {
        return false;
    }
    char len_bytes[4];
    if (!in_.read(len_bytes, 4)) {
        throw ShardError(fmt::format("truncated record {} in {}", read_, path_.string()));
    }
    text.resize(le::get<std::uint32_t>(len_bytes));
    if (!in_.read(text.data(), static_cast<std::streamsize>(text.size()))) {
        throw ShardError(fmt::format("truncated record {} in {}", read_, path_.string()));
    }
    ++read_;
    return true;
}

std::vector<std::string> Shard::read_texts() const {
    ShardReader r(path);
    std::vector<std::string> out;
    out.reserve(r.record_count());
    for (std::string t; r.next(t);) {
        out.push_back(std::move(t));
    }
    return out;
}

ShardResult shuffle_and_shard(const DocumentSource& docs, const ShardPlan& plan, const std::filesystem::path& spill_dir,
                              const std::filesystem::path& out_dir, unsigned workers) {
    namespace fs = std::filesystem;
    plan.check();
    workers = std::max(1u, workers);

    std::error_code ec;
    fs::create_directories(spill_dir, ec);
    if (ec) {
        throw ShardError(fmt::format("cannot create spill directory {}: {}", spill_dir.string(), ec.message()));
    }
    fs::create_directories(out_dir / "train");
    fs::create_directories(out_dir / "test");

    std::vector<ShardId> ids;
    for (Split s : {Split::train, Split::test}) {
        for (std::uint32_t i = 0; i < plan.shard_count(s); ++i) {
            ids.push_back({s, i});
        }
    }
    auto slot_of = [&](ShardId id) { return id.split == Split::train ? id.index : plan.num_train_shards + id.index; };
    auto spill_path = [&](std::size_t slot) { return spill_dir / fmt::format("{}.spill", slot); };
    for (std::size_t slot = 0; slot < ids.size(); ++slot) {
        fs::remove(spill_path(slot), ec);
    }

    MemoryAccount account(plan.max_memory_bytes);
    ShardStats stats;
    std::vector<Buffer> buffers(ids.size());
    std::vector<std::uint64_t> spill_sizes(ids.size(), 0);
    std::vector<std::uint64_t> record_counts(ids.size(), 0);
    std::vector<std::uint64_t> max_lengths(ids.size(), 0);
    const auto trigger = static_cast<std::uint64_t>(kSpillTrigger * static_cast<double>(plan.max_memory_bytes));
    const auto target = static_cast<std::uint64_t>(kSpillTarget * static_cast<double>(plan.max_memory_bytes));

    std::mutex source_mu, buffer_mu;

    auto spill = [&](std::size_t slot) {
        auto& b = buffers[slot];
        if (b.bytes.empty()) {
            return;
        }
        const auto path = spill_path(slot);
        File f = open_file(path, "ab");
        write_all(f.get(), b.bytes, path, true);
        spill_sizes[slot] += b.bytes.size();
        stats.spill_events += 1;
        stats.spilled_bytes += b.bytes.size();
        account.release_locked(b.accounted);
        std::string().swap(b.bytes);
        b.accounted = 0;
    };

    // Largest-first eviction until `need` more bytes fit under the target.
    auto make_room = [&](std::uint64_t need) {
        if (account.used() + need <= trigger) {
            return;
        }
        while (account.used() > 0 && account.used() + need > target) {
            std::size_t largest = 0;
            for (std::size_t i = 1; i < buffers.size(); ++i) {
                if (buffers[i].accounted > buffers[largest].accounted) {
                    largest = i;
                }
            }
            spill(largest);
        }
    };

    std::exception_ptr failure;
    std::mutex failure_mu;
    auto distribute = [&] {
        try {
            DocumentRecord doc;
            std::string record;
            for (;;) {
                {
                    std::lock_guard lk(source_mu);
                    if (failure || !docs(doc)) {
                        return;
                    }
                }
                const std::uint64_t need = doc.text.size() + kRecordOverhead;
                if (need > plan.max_memory_bytes || doc.text.size() > UINT32_MAX) {
                    throw ShardError(fmt::format("document {} ({} bytes) does not fit in the memory budget of {} bytes", doc.doc_id,
                                                 doc.text.size(), plan.max_memory_bytes));
                }
                const Split split = assign_split(doc.doc_id, plan);
                const std::size_t slot = slot_of({split, assign_shard(doc.doc_id, split, plan)});
                record.clear();
                le::put<std::uint64_t>(record, doc.doc_id);
                le::put<std::uint32_t>(record, static_cast<std::uint32_t>(doc.text.size()));
                record.append(doc.text);

                std::lock_guard lk(buffer_mu);
                make_room(need);
                buffers[slot].bytes.append(record);
                buffers[slot].accounted += need;
                record_counts[slot] += 1;
                max_lengths[slot] = std::max<std::uint64_t>(max_lengths[slot], doc.text.size());
                account.add_locked(need);
                stats.documents += 1;
                stats.text_bytes += doc.text.size();
            }
        } catch (...) {
            std::lock_guard lk(failure_mu);
            if (!failure) {
                failure = std::current_exception();
            }
        }
    };

    {
        std::vector<std::jthread> pool;
        for (unsigned w = 1; w < workers; ++w) {
            pool.emplace_back(distribute);
        }
        distribute();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
    for (std::size_t slot = 0; slot < ids.size(); ++slot) {
        spill(slot);
    }

    // Finalize: index each spill file, sort by keyed order, copy records out.
    std::vector<Shard> shards(ids.size());
    std::atomic<std::size_t> next_slot{0};
    auto finalize = [&] {
        try {
            for (std::size_t slot; (slot = next_slot.fetch_add(1)) < ids.size();) {
                {
                    std::lock_guard lk(failure_mu);
                    if (failure) {
                        return;
                    }
                }
                const ShardId id = ids[slot];
                // One reservation per shard: its index plus the largest record in flight.
                const std::uint64_t reservation = record_counts[slot] * kRecordOverhead + max_lengths[slot] + kRecordOverhead;
                if (reservation > plan.max_memory_bytes) {
                    throw ShardError(fmt::format("{} needs {} accounted bytes to finalize, more than the budget; use more shards",
                                                 shard_relpath(id, ".xbs"), reservation));
                }
                account.reserve(reservation);
                std::vector<IndexEntry> index;
                index.reserve(record_counts[slot]);
                File in;
                if (spill_sizes[slot] > 0) {
                    in = open_file(spill_path(slot), "rb");
                    std::uint64_t pos = 0;
                    char head[12];
                    while (pos < spill_sizes[slot]) {
                        if (std::fread(head, 1, sizeof(head), in.get()) != sizeof(head)) {
                            throw ShardError("truncated spill file " + spill_path(slot).string());
                        }
                        const auto doc_id = le::get<std::uint64_t>(head);
                        const auto len = le::get<std::uint32_t>(head + 8);
                        index.push_back({order_key(doc_id, plan), doc_id, pos + sizeof(head), len});
                        pos += sizeof(head) + len;
                        if (fseeko(in.get(), static_cast<off_t>(pos), SEEK_SET) != 0) {
                            throw ShardError("seek failed in " + spill_path(slot).string());
                        }
                    }
                }
                std::sort(index.begin(), index.end(),
                          [](const IndexEntry& a, const IndexEntry& b) { return std::tie(a.key, a.doc_id) < std::tie(b.key, b.doc_id); });

                const auto out_path = out_dir / shard_relpath(id, ".xbs");
                File out = open_file(out_path, "wb");
                Sha256 digest;
                const std::string header = shard_header(static_cast<std::uint32_t>(index.size()));
                write_all(out.get(), header, out_path);
                digest.update(header);
                std::string record;
                for (const auto& e : index) {
                    record.clear();
                    le::put<std::uint32_t>(record, e.length);
                    record.resize(4 + e.length);
                    if (fseeko(in.get(), static_cast<off_t>(e.offset), SEEK_SET) != 0 ||
                        std::fread(record.data() + 4, 1, e.length, in.get()) != e.length) {
                        throw ShardError("short read from spill file " + spill_path(slot).string());
                    }
                    write_all(out.get(), record, out_path);
                    digest.update(record);
                }
                write_all(out.get(), {}, out_path, true);
                out.reset();
                in.reset();
                account.release(reservation);
                fs::remove(spill_path(slot));
                shards[slot] = Shard{id, out_path, static_cast<std::uint32_t>(index.size()), to_hex(digest.finish())};
            }
        } catch (...) {
            std::lock_guard lk(failure_mu);
            if (!failure) {
                failure = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        for (unsigned w = 1; w < workers; ++w) {
            pool.emplace_back(finalize);
        }
        finalize();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }

    std::ofstream manifest(out_dir / "MANIFEST.tsv", std::ios::binary);
    for (const auto& s : shards) {
        manifest << shard_relpath(s.id, ".xbs") << '\t' << s.record_count << '\t' << s.checksum << '\n';
    }
    if (!manifest) {
        throw ShardError("cannot write " + (out_dir / "MANIFEST.tsv").string());
    }
    stats.peak_accounted_bytes = account.peak();
    return {std::move(shards), stats};
}

std::vector<Shard> read_manifest(const std::filesystem::path& out_dir) {
    std::ifstream in(out_dir / "MANIFEST.tsv", std::ios::binary);
    if (!in) {
        throw ShardError("missing shard manifest in " + out_dir.string());
    }
    std::vector<Shard> out;
    for (std::string line; std::getline(in, line);) {
        std::istringstream fields(line);
        std::string rel, checksum;
        std::uint32_t count = 0;
        if (!(fields >> rel >> count >> checksum)) {
            throw ShardError("malformed manifest line: " + line);
        }
        Shard s;
        s.id.split = rel.starts_with("test/") ? Split::test : Split::train;
        const auto dash = rel.rfind('-');
        s.id.index = static_cast<std::uint32_t>(std::stoul(rel.substr(dash + 1)));
        s.path = out_dir / rel;
        s.record_count = count;
        s.checksum = checksum;
        out.push_back(std::move(s));
    }
    return out;
}

std::string dataset_id(const std::vector<Shard>& shards, const std::optional<std::string>& override) {
    if (override && !override->empty()) {
        return *override;
    }
    if (shards.empty()) {
        throw ShardError("dataset_id needs at least one shard");
    }
    std::vector<std::string> sums;
    sums.reserve(shards.size());
    for (const auto& s : shards) {
        sums.push_back(s.checksum);
    }
    std::sort(sums.begin(), sums.end());
    Sha256 h;
    for (const auto& s : sums) {
        h.update(s);
        h.update("\n");
    }
    return to_hex(h.finish()).substr(0, 16);
}

}  // namespace xbert
