#include "unicalli/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "unicalli/error.hpp"

namespace unicalli {

GrayImage::GrayImage(int height, int width, float fill) : height_(height), width_(width) {
    if (height < 0 || width < 0) {
        throw Error("image dimensions must be non-negative");
    }
    pixels_.assign(static_cast<std::size_t>(height) * width, fill);
}

float byte_to_unit(std::uint8_t p) {
    return (static_cast<float>(p) - 127.5f) / 127.5f;
}

std::uint8_t unit_to_byte(float v) {
    float scaled = std::nearbyint(v * 127.5f + 127.5f);
    return static_cast<std::uint8_t>(std::clamp(scaled, 0.0f, 255.0f));
}

std::vector<std::uint8_t> to_bytes(const GrayImage& image) {
    std::vector<std::uint8_t> out(image.pixels().size());
    std::ranges::transform(image.pixels(), out.begin(), unit_to_byte);
    return out;
}

GrayImage from_bytes(int height, int width, std::span<const std::uint8_t> bytes) {
    if (bytes.size() != static_cast<std::size_t>(height) * width) {
        throw Error("pixel buffer size does not match dimensions");
    }
    GrayImage image(height, width);
    std::ranges::transform(bytes, image.pixels().begin(), byte_to_unit);
    return image;
}

std::string encode_pgm(const GrayImage& image) {
    std::string header = "P5\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
    auto bytes = to_bytes(image);
    header.append(bytes.begin(), bytes.end());
    return header;
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string_view next_token(std::string_view data, std::size_t& pos) {
    while (pos < data.size()) {
        char c = data[pos];
        if (c == '#') {
            while (pos < data.size() && data[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            ++pos;
        } else {
            break;
        }
    }
    std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    return data.substr(start, pos - start);
}

int parse_dimension(std::string_view token, const char* what) {
    if (token.empty() || token.size() > 6 || !std::ranges::all_of(token, [](char c) { return c >= '0' && c <= '9'; })) {
        throw Error(std::string("raster header: bad ") + what);
    }
    return std::stoi(std::string(token));
}

} // namespace

GrayImage decode_pgm(std::string_view data) {
    std::size_t pos = 0;
    if (next_token(data, pos) != "P5") {
        throw Error("raster header: bad magic (expected P5)");
    }
    int width = parse_dimension(next_token(data, pos), "width");
    int height = parse_dimension(next_token(data, pos), "height");
    if (next_token(data, pos) != "255") {
        throw Error("raster header: maxval must be 255");
    }
    if (pos >= data.size()) {
        throw Error("raster truncated after header");
    }
    ++pos; // single whitespace byte ends the header
    std::size_t need = static_cast<std::size_t>(width) * height;
    if (data.size() - pos < need) {
        throw Error("raster truncated: expected " + std::to_string(need) + " pixel bytes, found " +
                    std::to_string(data.size() - pos));
    }
    auto bytes = std::span(reinterpret_cast<const std::uint8_t*>(data.data() + pos), need);
    return from_bytes(height, width, bytes);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view data) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot write " + tmp.string());
        }
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        if (!out) {
            throw Error("write failed for " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw Error("cannot rename " + tmp.string() + ": " + ec.message());
    }
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
    write_file_atomic(path, encode_pgm(image));
}

GrayImage read_pgm(const std::filesystem::path& path) {
    try {
        return decode_pgm(read_file(path));
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

GrayImage invert(const GrayImage& image) {
    GrayImage out = image;
    for (float& v : out.pixels()) v = -v;
    return out;
}

GrayImage transpose(const GrayImage& image) {
    GrayImage out(image.width(), image.height());
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x) out.at(x, y) = image.at(y, x);
    return out;
}

GrayImage crop(const GrayImage& image, const CharBox& region) {
    if (!region.valid_within(image.height(), image.width())) {
        throw Error("crop region outside image");
    }
    GrayImage out(region.height(), region.width());
    for (int y = 0; y < region.height(); ++y)
        for (int x = 0; x < region.width(); ++x) out.at(y, x) = image.at(region.y0 + y, region.x0 + x);
    return out;
}

GrayImage resize_nearest(const GrayImage& image, int height, int width) {
    if (image.empty() || height <= 0 || width <= 0) {
        throw Error("resize: empty source or target");
    }
    GrayImage out(height, width);
    for (int y = 0; y < height; ++y) {
        int sy = std::min(image.height() - 1, static_cast<int>((y + 0.5) * image.height() / height));
        for (int x = 0; x < width; ++x) {
            int sx = std::min(image.width() - 1, static_cast<int>((x + 0.5) * image.width() / width));
            out.at(y, x) = image.at(sy, sx);
        }
    }
    return out;
}

} // namespace unicalli
