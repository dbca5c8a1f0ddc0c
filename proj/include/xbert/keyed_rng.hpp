#pragma once

// Counter-based randomness. Every random decision in the pipeline is a pure
// function of (seed, key...), so results do not depend on processing order or
// on how work is split between threads.

#include <cstdint>
#include <initializer_list>

namespace xbert {

/// SplitMix64 finalizer. A bijection on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

/// Folds a key tuple into one 64-bit word, seeded.
constexpr std::uint64_t keyed_hash(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) noexcept {
    std::uint64_t h = mix64(seed + kGolden);
    for (auto k : keys) {
        h = mix64(h ^ mix64(k + kGolden));
    }
    return h;
}

/// Domain tags keep the different decisions about one document independent.
enum class RngDomain : std::uint64_t {
    split = 0x73706c6974ULL,      // "split"
    shard = 0x7368617264ULL,      // "shard"
    order = 0x6f72646572ULL,      // "order"
    masking = 0x6d61736bULL,      // "mask"
    document = 0x646f63ULL,       // "doc"
};

/// Maps a 64-bit word to [0, 1) using its top 53 bits.
constexpr double to_unit(std::uint64_t x) noexcept {
    return static_cast<double>(x >> 11) * 0x1.0p-53;
}

/// Deterministic stream of 64-bit words: word n is mix64(key + (n + 1) * golden).
class KeyedStream {
public:
    explicit constexpr KeyedStream(std::uint64_t key) noexcept : key_(key) {}

    constexpr std::uint64_t next() noexcept {
        ++counter_;
        return mix64(key_ + counter_ * kGolden);
    }

    constexpr double uniform() noexcept { return to_unit(next()); }

    /// Unbiased integer in [0, bound) (Lemire's multiply-shift with rejection).
    std::uint64_t below(std::uint64_t bound) noexcept {
        if (bound <= 1) {
            return 0;
        }
        unsigned __int128 m = static_cast<unsigned __int128>(next()) * bound;
        auto low = static_cast<std::uint64_t>(m);
        if (low < bound) {
            const std::uint64_t threshold = (0 - bound) % bound;
            while (low < threshold) {
                m = static_cast<unsigned __int128>(next()) * bound;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace xbert
