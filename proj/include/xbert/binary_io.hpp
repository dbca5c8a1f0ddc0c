#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

namespace xbert::le {

template <typename UInt>
inline void put(std::string& out, UInt v) {
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

template <typename UInt>
inline UInt get(const char* p) {
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        v |= static_cast<UInt>(static_cast<unsigned char>(p[i])) << (8 * i);
    }
    return v;
}

template <typename UInt>
inline UInt get(std::string_view s, std::size_t offset) {
    return get<UInt>(s.data() + offset);
}

}  // namespace xbert::le
