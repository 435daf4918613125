#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "mmist/mmfv.hpp"
#include "mmist/rng.hpp"

namespace fs = std::filesystem;
using namespace mmist;

namespace {

fs::path tmp_dir() {
    const fs::path dir = fs::temp_directory_path() / "mmfv_tests";
    fs::create_directories(dir);
    return dir;
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

std::vector<unsigned char> file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("mmfv round-trip is lossless across random sizes") {
    const fs::path path = tmp_dir() / "roundtrip.mmfv";
    Rng rng(42);
    for (int trial = 0; trial < 200; ++trial) {
        const size_t n = trial == 0 ? 1 : (trial == 1 ? 2048 : 1 + rng.below(300));
        FeatureVector v(n);
        for (auto& x : v) x = float(rng.normal());
        write_feature_file(path, v);
        CHECK(read_feature_file(path) == v);
    }
}

TEST_CASE("mmfv rank-2 round-trip preserves dims and payload") {
    const fs::path path = tmp_dir() / "rank2.mmfv";
    mmfv::Tensor t;
    t.dims = {3, 4};
    for (int i = 0; i < 12; ++i) t.data.push_back(float(i) * 0.5f);
    mmfv::write(path, t);
    const mmfv::Tensor back = mmfv::read(path);
    CHECK(back.dims == t.dims);
    CHECK(back.data == t.data);
}

TEST_CASE("mmfv header layout is exactly magic, rank, dims, payload") {
    const fs::path path = tmp_dir() / "layout.mmfv";
    write_feature_file(path, {1.0f});
    const auto bytes = file_bytes(path);
    REQUIRE(bytes.size() == 5 + 4 + 4 + 4);
    CHECK(bytes[0] == 0x4D);
    CHECK(bytes[1] == 0x4D);
    CHECK(bytes[2] == 0x46);
    CHECK(bytes[3] == 0x56);
    CHECK(bytes[4] == 0x01);
    uint32_t rank = 0, dim = 0;
    std::memcpy(&rank, bytes.data() + 5, 4);
    std::memcpy(&dim, bytes.data() + 9, 4);
    CHECK(rank == 1);
    CHECK(dim == 1);
}

TEST_CASE("mmfv malformed inputs raise the declared errors") {
    const fs::path dir = tmp_dir();

    SUBCASE("missing file") {
        CHECK_THROWS_AS(mmfv::read(dir / "does_not_exist.mmfv"), MissingFeatureFile);
    }
    SUBCASE("bad magic") {
        write_bytes(dir / "badmagic.mmfv", {'X', 'X', 'X', 'X', 0x01, 1, 0, 0, 0});
        CHECK_THROWS_AS(mmfv::read(dir / "badmagic.mmfv"), BadMagic);
    }
    SUBCASE("wrong version byte") {
        write_bytes(dir / "badver.mmfv", {0x4D, 0x4D, 0x46, 0x56, 0x02, 1, 0, 0, 0});
        CHECK_THROWS_AS(mmfv::read(dir / "badver.mmfv"), BadMagic);
    }
    SUBCASE("truncated rank") {
        write_bytes(dir / "trunc_rank.mmfv", {0x4D, 0x4D, 0x46, 0x56, 0x01, 1});
        CHECK_THROWS_AS(mmfv::read(dir / "trunc_rank.mmfv"), TruncatedPayload);
    }
    SUBCASE("truncated dims") {
        write_bytes(dir / "trunc_dims.mmfv", {0x4D, 0x4D, 0x46, 0x56, 0x01, 2, 0, 0, 0, 5, 0});
        CHECK_THROWS_AS(mmfv::read(dir / "trunc_dims.mmfv"), TruncatedPayload);
    }
    SUBCASE("truncated payload reports the byte offset") {
        const fs::path path = dir / "trunc_payload.mmfv";
        write_feature_file(path, {1.0f, 2.0f, 3.0f});
        auto bytes = file_bytes(path);
        bytes.resize(bytes.size() - 6);
        write_bytes(path, bytes);
        try {
            mmfv::read(path);
            FAIL("expected TruncatedPayload");
        } catch (const TruncatedPayload& e) {
            CHECK(std::string(e.what()).find("byte") != std::string::npos);
        }
    }
    SUBCASE("non-finite payload value") {
        const fs::path path = dir / "nonfinite.mmfv";
        write_feature_file(path, {1.0f, 2.0f});
        auto bytes = file_bytes(path);
        const uint32_t inf_bits = 0x7F800000u;
        std::memcpy(bytes.data() + bytes.size() - 4, &inf_bits, 4);
        write_bytes(path, bytes);
        CHECK_THROWS_AS(mmfv::read(path), NonFiniteValue);
    }
    SUBCASE("rank-2 file rejected by the feature reader") {
        const fs::path path = dir / "rank2_feature.mmfv";
        mmfv::write(path, {{2, 2}, {1, 2, 3, 4}});
        CHECK_THROWS_AS(read_feature_file(path), DimensionMismatch);
    }
}

TEST_CASE("mmfv empty vector round-trips") {
    const fs::path path = tmp_dir() / "empty.mmfv";
    write_feature_file(path, {});
    CHECK(read_feature_file(path).empty());
}
