#pragma once

// Minimal deterministic zip archives: stored (uncompressed) members, sorted
// by name, every timestamp pinned to 1980-01-01 00:00, no extra fields.
// Identical inputs give byte-identical archives.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace xbert {

struct ZipMember {
    std::string name;
    std::string data;
    bool operator==(const ZipMember&) const = default;
};

/// Throws Error on duplicate names or I/O failure. Archives are limited to 4 GiB (no zip64).
void write_zip(const std::filesystem::path& out, std::vector<ZipMember> members);

/// Reads an archive written by write_zip (stored members only), in archive order.
/// Verifies every CRC-32. Throws Error on anything else.
std::vector<ZipMember> read_zip(const std::filesystem::path& path);

}  // namespace xbert
