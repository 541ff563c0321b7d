#include <doctest.h>

#include <filesystem>

#include "unicalli/error.hpp"
#include "unicalli/image.hpp"
#include "unicalli/rng.hpp"

using namespace unicalli;

namespace {

GrayImage noise(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    GrayImage img(h, w);
    for (float& v : img.pixels()) v = byte_to_unit(static_cast<std::uint8_t>(rng.uniform_int(0, 255)));
    return img;
}

} // namespace

TEST_SUITE("image") {

TEST_CASE("byte mapping is exact at both ends and inverts cleanly") {
    CHECK(byte_to_unit(0) == -1.0f);
    CHECK(byte_to_unit(255) == 1.0f);
    for (int p = 0; p < 256; ++p) {
        auto b = static_cast<std::uint8_t>(p);
        CHECK(unit_to_byte(byte_to_unit(b)) == b);
        CHECK(byte_to_unit(static_cast<std::uint8_t>(255 - p)) == -byte_to_unit(b));
    }
}

TEST_CASE("pgm round trip is bit exact") {
    for (int i = 0; i < 10; ++i) {
        GrayImage img = noise(1 + i * 3, 2 + i * 5, static_cast<std::uint64_t>(i));
        std::string bytes = encode_pgm(img);
        CHECK(bytes.rfind("P5", 0) == 0);
        CHECK(decode_pgm(bytes) == img);
    }
}

TEST_CASE("pgm header is hand-checkable") {
    GrayImage img(2, 3, 1.0f);
    std::string bytes = encode_pgm(img);
    std::string header = "P5\n3 2\n255\n";
    REQUIRE(bytes.size() == header.size() + 6);
    CHECK(bytes.substr(0, header.size()) == header);
    for (std::size_t i = header.size(); i < bytes.size(); ++i) CHECK(static_cast<unsigned char>(bytes[i]) == 255);
}

TEST_CASE("malformed rasters are rejected") {
    std::string good = encode_pgm(noise(4, 4, 1));
    CHECK_THROWS_AS(decode_pgm("P6\n4 4\n255\n" + good.substr(11)), Error);
    CHECK_THROWS_AS(decode_pgm(good.substr(0, good.size() - 1)), Error);
    CHECK_THROWS_AS(decode_pgm("P5\n4 4\n65535\n"), Error);
    CHECK_THROWS_AS(decode_pgm(""), Error);
}

TEST_CASE("file round trip and atomic write") {
    auto dir = std::filesystem::temp_directory_path() / "unicalli_image_test";
    std::filesystem::create_directories(dir);
    GrayImage img = noise(7, 9, 3);
    write_pgm(dir / "a.pgm", img);
    CHECK(read_pgm(dir / "a.pgm") == img);
    write_file_atomic(dir / "b.txt", "first");
    write_file_atomic(dir / "b.txt", "second");
    CHECK(read_file(dir / "b.txt") == "second");
    CHECK_THROWS_AS(read_pgm(dir / "missing.pgm"), Error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("invert, transpose, crop and resize") {
    GrayImage img = noise(5, 8, 4);
    GrayImage inv = invert(img);
    for (std::size_t i = 0; i < img.pixels().size(); ++i) CHECK(inv.pixels()[i] == -img.pixels()[i]);
    CHECK(invert(inv) == img);

    GrayImage t = transpose(img);
    REQUIRE(t.height() == 8);
    REQUIRE(t.width() == 5);
    CHECK(t.at(6, 2) == img.at(2, 6));
    CHECK(transpose(t) == img);

    GrayImage c = crop(img, {2, 1, 6, 4});
    REQUIRE(c.height() == 3);
    REQUIRE(c.width() == 4);
    CHECK(c.at(0, 0) == img.at(1, 2));
    CHECK(c.at(2, 3) == img.at(3, 5));
    CHECK_THROWS_AS(crop(img, {0, 0, 9, 2}), Error);

    CHECK(resize_nearest(img, 5, 8) == img);
    GrayImage up = resize_nearest(img, 10, 16);
    CHECK(up.at(9, 15) == img.at(4, 7));
    CHECK(up.at(0, 1) == img.at(0, 0));
}

TEST_CASE("byte buffers must match the dimensions") {
    std::vector<std::uint8_t> bytes(6, 0);
    CHECK_THROWS_AS(from_bytes(2, 4, bytes), Error);
    GrayImage img = from_bytes(2, 3, bytes);
    CHECK(to_bytes(img) == bytes);
}

}
