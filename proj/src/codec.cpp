#include "unicalli/codec.hpp"

#include <algorithm>
#include <string>

#include "unicalli/error.hpp"

namespace unicalli {

Codec::Codec(int patch) : patch_(patch) {
    if (patch < 1) throw Error("codec patch must be >= 1");
}

Latent Codec::encode(const GrayImage& image) const {
    if (image.empty() || image.height() % patch_ != 0 || image.width() % patch_ != 0) {
        throw Error("codec: image " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                    " not divisible by patch " + std::to_string(patch_));
    }
    Latent z(channels(), image.height() / patch_, image.width() / patch_);
    for (int c = 0; c < z.channels; ++c) {
        int dy = c / patch_;
        int dx = c % patch_;
        for (int y = 0; y < z.height; ++y)
            for (int x = 0; x < z.width; ++x) z.at(c, y, x) = image.at(y * patch_ + dy, x * patch_ + dx);
    }
    return z;
}

GrayImage Codec::decode(const Latent& z) const {
    if (z.channels != channels() || z.height <= 0 || z.width <= 0 ||
        z.data.size() != static_cast<std::size_t>(z.channels) * z.height * z.width) {
        throw Error("codec: latent shape " + std::to_string(z.channels) + "x" + std::to_string(z.height) + "x" +
                    std::to_string(z.width) + " inconsistent with patch " + std::to_string(patch_));
    }
    GrayImage image(z.height * patch_, z.width * patch_);
    for (int c = 0; c < z.channels; ++c) {
        int dy = c / patch_;
        int dx = c % patch_;
        for (int y = 0; y < z.height; ++y)
            for (int x = 0; x < z.width; ++x)
                image.at(y * patch_ + dy, x * patch_ + dx) = std::clamp(z.at(c, y, x), -1.0f, 1.0f);
    }
    return image;
}

} // namespace unicalli
