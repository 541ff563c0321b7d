#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace unicalli {

// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct CharBox {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    long area() const { return static_cast<long>(width()) * height(); }
    double center_x() const { return 0.5 * (x0 + x1); }
    bool valid_within(int height, int width) const {
        return 0 <= x0 && x0 < x1 && x1 <= width && 0 <= y0 && y0 < y1 && y1 <= height;
    }
    bool overlaps(const CharBox& o) const {
        return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
    }
    bool operator==(const CharBox&) const = default;
};

// Single-channel image held in [-1, 1]. The 8-bit storage form maps byte p to
// (p - 127.5) / 127.5, so byte inversion 255 - p is exact negation in memory.
class GrayImage {
public:
    GrayImage() = default;
    GrayImage(int height, int width, float fill = -1.0f);

    int height() const { return height_; }
    int width() const { return width_; }
    bool empty() const { return pixels_.empty(); }

    float& at(int y, int x) { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
    float at(int y, int x) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }

    std::span<float> pixels() { return pixels_; }
    std::span<const float> pixels() const { return pixels_; }

    bool operator==(const GrayImage&) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<float> pixels_;
};

float byte_to_unit(std::uint8_t p);
std::uint8_t unit_to_byte(float v);

std::vector<std::uint8_t> to_bytes(const GrayImage& image);
GrayImage from_bytes(int height, int width, std::span<const std::uint8_t> bytes);

// Binary PGM ("P5", width height, maxval 255), row-major, 8 bits per pixel.
std::string encode_pgm(const GrayImage& image);
GrayImage decode_pgm(std::string_view data);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

GrayImage invert(const GrayImage& image);
GrayImage transpose(const GrayImage& image);
GrayImage crop(const GrayImage& image, const CharBox& region);
GrayImage resize_nearest(const GrayImage& image, int height, int width);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temporary and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

} // namespace unicalli
