#include "xbert/zip.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <limits>

#include <zlib.h>

#include "xbert/binary_io.hpp"
#include "xbert/error.hpp"

namespace xbert {

namespace {

constexpr std::uint32_t kLocalSig = 0x04034b50;
constexpr std::uint32_t kCentralSig = 0x02014b50;
constexpr std::uint32_t kEndSig = 0x06054b50;
constexpr std::uint16_t kVersion = 20;
constexpr std::uint16_t kDosTime = 0;                           // 00:00:00
constexpr std::uint16_t kDosDate = (0 << 9) | (1 << 5) | 1;     // 1980-01-01

std::uint32_t crc32_of(const std::string& data) {
    uLong crc = crc32(0L, Z_NULL, 0);
    std::size_t pos = 0;
    while (pos < data.size()) {
        const auto n = static_cast<uInt>(std::min<std::size_t>(data.size() - pos, std::numeric_limits<uInt>::max()));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data.data() + pos), n);
        pos += n;
    }
    return static_cast<std::uint32_t>(crc);
}

void put_entry_fields(std::string& out, std::uint32_t crc, std::uint32_t size, std::uint16_t name_len) {
    le::put<std::uint16_t>(out, 0);  // flags
    le::put<std::uint16_t>(out, 0);  // stored
    le::put<std::uint16_t>(out, kDosTime);
    le::put<std::uint16_t>(out, kDosDate);
    le::put<std::uint32_t>(out, crc);
    le::put<std::uint32_t>(out, size);
    le::put<std::uint32_t>(out, size);
    le::put<std::uint16_t>(out, name_len);
    le::put<std::uint16_t>(out, 0);  // extra length
}

}  // namespace

void write_zip(const std::filesystem::path& out, std::vector<ZipMember> members) {
    std::sort(members.begin(), members.end(), [](const ZipMember& a, const ZipMember& b) { return a.name < b.name; });
    for (std::size_t i = 1; i < members.size(); ++i) {
        if (members[i].name == members[i - 1].name) {
            throw Error("duplicate zip member " + members[i].name);
        }
    }
    if (members.size() > 0xffff) {
        throw Error("too many zip members");
    }

    std::string body;
    std::string central;
    for (const auto& m : members) {
        if (m.name.empty() || m.name.size() > 0xffff) {
            throw Error("invalid zip member name");
        }
        if (m.data.size() > 0xffffffffULL || body.size() > 0xffffffffULL) {
            throw Error("zip archive exceeds 4 GiB");
        }
        const auto crc = crc32_of(m.data);
        const auto size = static_cast<std::uint32_t>(m.data.size());
        const auto name_len = static_cast<std::uint16_t>(m.name.size());
        const auto offset = static_cast<std::uint32_t>(body.size());

        le::put<std::uint32_t>(body, kLocalSig);
        le::put<std::uint16_t>(body, kVersion);
        put_entry_fields(body, crc, size, name_len);
        body += m.name;
        body += m.data;

        le::put<std::uint32_t>(central, kCentralSig);
        le::put<std::uint16_t>(central, kVersion);  // made by
        le::put<std::uint16_t>(central, kVersion);  // needed
        put_entry_fields(central, crc, size, name_len);
        le::put<std::uint16_t>(central, 0);  // comment length
        le::put<std::uint16_t>(central, 0);  // disk number
        le::put<std::uint16_t>(central, 0);  // internal attributes
        le::put<std::uint32_t>(central, 0);  // external attributes
        le::put<std::uint32_t>(central, offset);
        central += m.name;
    }
    if (body.size() + central.size() > 0xffffffffULL) {
        throw Error("zip archive exceeds 4 GiB");
    }
    const auto n = static_cast<std::uint16_t>(members.size());
    std::string end;
    le::put<std::uint32_t>(end, kEndSig);
    le::put<std::uint16_t>(end, 0);
    le::put<std::uint16_t>(end, 0);
    le::put<std::uint16_t>(end, n);
    le::put<std::uint16_t>(end, n);
    le::put<std::uint32_t>(end, static_cast<std::uint32_t>(central.size()));
    le::put<std::uint32_t>(end, static_cast<std::uint32_t>(body.size()));
    le::put<std::uint16_t>(end, 0);

    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    f << body << central << end;
    f.close();
    if (!f) {
        throw Error("I/O error writing " + out.string());
    }
}

std::vector<ZipMember> read_zip(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw Error("cannot open " + path.string());
    }
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const std::string_view sv(bytes);
    auto need = [&](std::size_t off, std::size_t n) {
        if (off + n > sv.size()) {
            throw Error("truncated zip archive " + path.string());
        }
    };

    if (sv.size() < 22) {
        throw Error("not a zip archive: " + path.string());
    }
    const std::size_t eocd = sv.size() - 22;  // no archive comment
    if (le::get<std::uint32_t>(sv, eocd) != kEndSig) {
        throw Error("zip end record not found in " + path.string());
    }
    const auto count = le::get<std::uint16_t>(sv, eocd + 10);
    std::size_t cd = le::get<std::uint32_t>(sv, eocd + 16);

    std::vector<ZipMember> out;
    for (std::uint16_t i = 0; i < count; ++i) {
        need(cd, 46);
        if (le::get<std::uint32_t>(sv, cd) != kCentralSig) {
            throw Error("bad central directory entry in " + path.string());
        }
        const auto method = le::get<std::uint16_t>(sv, cd + 10);
        const auto crc = le::get<std::uint32_t>(sv, cd + 16);
        const auto size = le::get<std::uint32_t>(sv, cd + 24);
        const auto name_len = le::get<std::uint16_t>(sv, cd + 28);
        const auto extra_len = le::get<std::uint16_t>(sv, cd + 30);
        const auto comment_len = le::get<std::uint16_t>(sv, cd + 32);
        const std::size_t local = le::get<std::uint32_t>(sv, cd + 42);
        need(cd + 46, name_len);
        ZipMember m;
        m.name = std::string(sv.substr(cd + 46, name_len));
        if (method != 0) {
            throw Error("unsupported compression for member " + m.name);
        }
        need(local, 30);
        if (le::get<std::uint32_t>(sv, local) != kLocalSig) {
            throw Error("bad local header for member " + m.name);
        }
        const std::size_t data_off = local + 30 + le::get<std::uint16_t>(sv, local + 26) + le::get<std::uint16_t>(sv, local + 28);
        need(data_off, size);
        m.data = std::string(sv.substr(data_off, size));
        if (crc32_of(m.data) != crc) {
            throw Error("CRC mismatch for member " + m.name);
        }
        out.push_back(std::move(m));
        cd += 46 + name_len + extra_len + comment_len;
    }
    return out;
}

}  // namespace xbert
