#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <zlib.h>

#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "puzzleseq/dataset.hpp"
#include "puzzleseq/errors.hpp"
#include "puzzleseq/image.hpp"
#include "puzzleseq/puzzle.hpp"
#include "puzzleseq/rng.hpp"

using namespace puzzleseq;
namespace fs = std::filesystem;

namespace {

std::string temp_dir() {
    const auto dir = fs::temp_directory_path() / "puzzleseq_core_test";
    fs::create_directories(dir);
    return dir.string();
}

Image numbered_image(std::size_t side) {
    Image img(side, side, 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        img.data[i] = double(i % 251) / 255.0;
    }
    return img;
}

// test-only PNG writer (8-bit RGB, filter 0) so the reader can be exercised
// without external fixtures
void write_test_png(const std::string& path, const Image& img) {
    std::vector<std::uint8_t> raw;
    for (std::size_t y = 0; y < img.height; ++y) {
        raw.push_back(0);  // filter: none
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                raw.push_back((std::uint8_t)std::lround(img.at(y, x, c) * 255.0));
            }
        }
    }
    uLongf comp_len = compressBound((uLong)raw.size());
    std::vector<std::uint8_t> comp(comp_len);
    REQUIRE(compress(comp.data(), &comp_len, raw.data(), (uLong)raw.size()) == Z_OK);
    comp.resize(comp_len);

    auto be32 = [](std::uint32_t v) {
        return std::array<std::uint8_t, 4>{(std::uint8_t)(v >> 24), (std::uint8_t)(v >> 16),
                                           (std::uint8_t)(v >> 8), (std::uint8_t)v};
    };
    std::ofstream f(path, std::ios::binary);
    const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    f.write((const char*)sig, 8);
    auto chunk = [&](const char* type, const std::vector<std::uint8_t>& payload) {
        auto len = be32((std::uint32_t)payload.size());
        f.write((const char*)len.data(), 4);
        f.write(type, 4);
        f.write((const char*)payload.data(), (std::streamsize)payload.size());
        std::uint32_t crc = (std::uint32_t)crc32(0L, (const Bytef*)type, 4);
        if (!payload.empty()) {
            crc = (std::uint32_t)crc32(crc, payload.data(), (uInt)payload.size());
        }
        auto crc_be = be32(crc);
        f.write((const char*)crc_be.data(), 4);
    };
    std::vector<std::uint8_t> ihdr;
    for (auto b : be32((std::uint32_t)img.width)) ihdr.push_back(b);
    for (auto b : be32((std::uint32_t)img.height)) ihdr.push_back(b);
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // RGB
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    chunk("IHDR", ihdr);
    chunk("IDAT", comp);
    chunk("IEND", {});
}

}  // namespace

TEST_CASE("cut_image produces row-major pieces") {
    const Image img = numbered_image(6);
    const auto pieces = cut_image(img, 3);
    REQUIRE(pieces.size() == 9);
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(pieces[i].side == 2);
        CHECK(pieces[i].source_position == i);
    }
    // piece 0 is the top-left 2x2 block
    for (std::size_t y = 0; y < 2; ++y) {
        for (std::size_t x = 0; x < 2; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                CHECK(pieces[0].at(y, x, c) == img.at(y, x, c));
            }
        }
    }
    // piece 5 sits at grid (1,2)
    CHECK(pieces[5].at(0, 0, 0) == img.at(2, 4, 0));
}

TEST_CASE("cut then reassemble by source position is bit exact") {
    const Image img = numbered_image(4);
    PuzzleInstance pz = shuffle_pieces(cut_image(img, 2), 2, 99);
    const Image back = reassemble(pz, true_placement(pz));
    REQUIRE(back.data.size() == img.data.size());
    CHECK(std::memcmp(back.data.data(), img.data.data(),
                      img.data.size() * sizeof(double)) == 0);
}

TEST_CASE("cut_image rejects a non-divisible side with the remainder") {
    const Image img = numbered_image(5);
    try {
        cut_image(img, 2);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("remainder 1") != std::string::npos);
    }
}

TEST_CASE("shuffle is deterministic and label preserving") {
    const Image img = numbered_image(6);
    const PuzzleInstance a = shuffle_pieces(cut_image(img, 3), 3, 4242);
    const PuzzleInstance b = shuffle_pieces(cut_image(img, 3), 3, 4242);
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(a.pieces[i].source_position == b.pieces[i].source_position);
    }
    CHECK(is_permutation(true_placement(a)));

    // single piece stays put
    const PuzzleInstance single = shuffle_pieces(cut_image(numbered_image(2), 1), 1, 7);
    CHECK(single.pieces[0].source_position == 0);
}

TEST_CASE("shuffle fixed-point rate matches the uniform-permutation expectation") {
    // expected fixed points of a uniform permutation is 1 for any N
    const Image img = numbered_image(6);
    const auto pieces = cut_image(img, 3);
    double fixed = 0.0;
    const std::size_t trials = 10000;
    for (std::size_t s = 0; s < trials; ++s) {
        const PuzzleInstance pz = shuffle_pieces(pieces, 3, 31337 + s);
        for (std::size_t i = 0; i < 9; ++i) {
            if (pz.pieces[i].source_position == i) fixed += 1.0;
        }
    }
    const double mean = fixed / double(trials);
    CHECK(std::abs(mean - 1.0) < 0.05);
}

TEST_CASE("mark_missing flags exactly m pieces and leaves pixels alone") {
    const Image img = numbered_image(6);
    PuzzleInstance pz = shuffle_pieces(cut_image(img, 3), 3, 5);

    const PuzzleInstance same = mark_missing(pz, 0, 11);
    for (const auto& p : same.pieces) CHECK(p.present);

    const PuzzleInstance m3 = mark_missing(pz, 3, 11);
    std::size_t missing = 0;
    for (std::size_t i = 0; i < 9; ++i) {
        if (!m3.pieces[i].present) ++missing;
        CHECK(m3.pieces[i].pixels == pz.pieces[i].pixels);
    }
    CHECK(missing == 3);
    CHECK(m3.missing_count == 3);

    CHECK_THROWS_AS(mark_missing(pz, 9, 1), ConfigError);
}

TEST_CASE("synth_image is deterministic, in range, and varies across seeds") {
    const Image a = synth_image(123, 48);
    const Image b = synth_image(123, 48);
    CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0);
    for (double v : a.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // 100 seed pairs differ in at least 1% of pixel values
    for (std::uint64_t s = 0; s < 100; ++s) {
        const Image x = synth_image(1000 + s, 24);
        const Image y = synth_image(2000 + s, 24);
        std::size_t diff = 0;
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            if (x.data[i] != y.data[i]) ++diff;
        }
        CHECK(double(diff) / double(x.data.size()) >= 0.01);
    }
}

TEST_CASE("ppm roundtrip preserves bytes") {
    const std::string dir = temp_dir();
    Image img(10, 10, 3);
    Rng rng(8);
    for (double& v : img.data) v = rng.uniform();
    write_ppm(dir + "/a.ppm", img);
    const Image back = read_ppm(dir + "/a.ppm");
    REQUIRE(back.height == 10);
    // quantized to bytes on write; a second write/read cycle is exact
    write_ppm(dir + "/b.ppm", back);
    const Image again = read_ppm(dir + "/b.ppm");
    CHECK(back.data == again.data);

    std::ofstream bad(dir + "/bad.ppm", std::ios::binary);
    bad << "P5 10 10 255\n";
    bad.close();
    CHECK_THROWS_AS(read_ppm(dir + "/bad.ppm"), DataError);
}

TEST_CASE("png reader handles an RGB file and read_image dispatches") {
    const std::string dir = temp_dir();
    Image img(9, 9, 3);
    Rng rng(9);
    for (double& v : img.data) v = rng.uniform();
    // quantize first so the comparison is exact
    for (double& v : img.data) v = std::lround(v * 255.0) / 255.0;
    write_test_png(dir + "/t.png", img);
    const Image back = read_png(dir + "/t.png");
    REQUIRE(back.height == 9);
    REQUIRE(back.width == 9);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        CHECK(std::abs(back.data[i] - img.data[i]) < 1e-12);
    }
    const Image via_dispatch = read_image(dir + "/t.png");
    CHECK(via_dispatch.data == back.data);
    CHECK_THROWS_AS(read_png(dir + "/missing.png"), DataError);
}

TEST_CASE("center_crop_square and resize") {
    Image img(10, 7, 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = double(i) / 300.0;
    const Image cropped = center_crop_square(img, 3);
    CHECK(cropped.height == 6);
    CHECK(cropped.width == 6);
    const Image up = resize(cropped, 12, 12);
    CHECK(up.height == 12);
    for (double v : up.data) CHECK(std::isfinite(v));
}

TEST_CASE("manifest roundtrip is byte stable and puzzles materialize deterministically") {
    const std::string dir = temp_dir();
    Manifest m;
    m.grid_side = 3;
    m.piece_px = 8;
    m.config_digest = "cafebabecafebabe";
    for (std::size_t i = 0; i < 4; ++i) {
        ManifestEntry e;
        e.id = "train-" + std::to_string(i);
        e.source = "synth:" + std::to_string(100 + i);
        e.grid_side = 3;
        e.missing_count = i % 2;
        e.shuffle_seed = 555 + i;
        m.entries.push_back(e);
    }
    save_manifest(dir + "/m.json", m);
    const Manifest loaded = load_manifest(dir + "/m.json");
    save_manifest(dir + "/m2.json", loaded);
    std::ifstream f1(dir + "/m.json"), f2(dir + "/m2.json");
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    CHECK(manifest_digest(m) == manifest_digest(loaded));

    const PuzzleInstance a = materialize_puzzle(loaded, loaded.entries[1]);
    const PuzzleInstance b = materialize_puzzle(loaded, loaded.entries[1]);
    REQUIRE(a.pieces.size() == 9);
    CHECK(a.missing_count == 1);
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(a.pieces[i].source_position == b.pieces[i].source_position);
        CHECK(a.pieces[i].pixels == b.pieces[i].pixels);
        CHECK(a.pieces[i].present == b.pieces[i].present);
    }
}
