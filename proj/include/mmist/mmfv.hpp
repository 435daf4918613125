#pragma once

// MMFV binary tensor format:
//   magic  4D 4D 46 56 01            ("MMFV" + version byte)
//   rank   u32 little-endian
//   dims   rank x u32 little-endian
//   data   row-major float32 little-endian
// Feature vectors are rank 1; latent bundles use rank 2.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mmist/errors.hpp"
#include "mmist/types.hpp"

namespace mmist {

namespace mmfv {

inline constexpr unsigned char kMagic[5] = {0x4D, 0x4D, 0x46, 0x56, 0x01};

static_assert(std::endian::native == std::endian::little,
              "MMFV codec assumes a little-endian host");

struct Tensor {
    std::vector<uint32_t> dims;
    std::vector<float> data;
};

inline void write(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for write: " + path.string());
    out.write(reinterpret_cast<const char*>(kMagic), 5);
    const uint32_t rank = uint32_t(t.dims.size());
    out.write(reinterpret_cast<const char*>(&rank), 4);
    out.write(reinterpret_cast<const char*>(t.dims.data()), 4 * std::streamsize(t.dims.size()));
    out.write(reinterpret_cast<const char*>(t.data.data()),
              std::streamsize(t.data.size() * sizeof(float)));
    if (!out) throw Error("write failed: " + path.string());
}

inline Tensor read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFeatureFile("cannot open: " + path.string());

    unsigned char magic[5];
    in.read(reinterpret_cast<char*>(magic), 5);
    if (in.gcount() != 5 || std::memcmp(magic, kMagic, 5) != 0)
        throw BadMagic("bad magic in " + path.string() + " at byte 0");

    uint32_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), 4);
    if (in.gcount() != 4)
        throw TruncatedPayload("truncated rank in " + path.string() + " at byte 5");

    Tensor t;
    t.dims.resize(rank);
    uint64_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        in.read(reinterpret_cast<char*>(&t.dims[i]), 4);
        if (in.gcount() != 4)
            throw TruncatedPayload("truncated dims in " + path.string() + " at byte " +
                                   std::to_string(9 + 4 * i));
        n *= t.dims[i];
    }

    t.data.resize(n);
    const uint64_t header = 9 + 4ull * rank;
    in.read(reinterpret_cast<char*>(t.data.data()), std::streamsize(n * sizeof(float)));
    if (uint64_t(in.gcount()) != n * sizeof(float))
        throw TruncatedPayload("truncated payload in " + path.string() + " at byte " +
                               std::to_string(header + uint64_t(in.gcount())));

    for (uint64_t i = 0; i < n; ++i)
        if (!std::isfinite(t.data[i]))
            throw NonFiniteValue("non-finite value in " + path.string() + " at byte " +
                                 std::to_string(header + i * sizeof(float)));
    return t;
}

} // namespace mmfv

inline void write_feature_file(const std::filesystem::path& path, const FeatureVector& v) {
    mmfv::write(path, {{uint32_t(v.size())}, v});
}

inline FeatureVector read_feature_file(const std::filesystem::path& path) {
    mmfv::Tensor t = mmfv::read(path);
    if (t.dims.size() != 1)
        throw DimensionMismatch("expected rank 1 in " + path.string() + ", found rank " +
                                std::to_string(t.dims.size()));
    return std::move(t.data);
}

} // namespace mmist
