#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mmist/errors.hpp"

namespace mmist {

// FNV-1a 64-bit, used for content hashes in ledgers and run manifests.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t hash_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot hash missing file: " + path.string());
    char buf[1 << 16];
    uint64_t h = 0xcbf29ce484222325ULL;
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h = fnv1a64(buf, size_t(in.gcount()), h);
    return h;
}

inline std::string hash_hex(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[size_t(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

} // namespace mmist
