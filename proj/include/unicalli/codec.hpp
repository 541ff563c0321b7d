#pragma once

#include <vector>

#include "unicalli/image.hpp"

namespace unicalli {

// channels x height x width, channel-major.
struct Latent {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Latent() = default;
    Latent(int c, int h, int w, float fill = 0.0f)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const Latent& o) const { return channels == o.channels && height == o.height && width == o.width; }
    bool operator==(const Latent&) const = default;
};

// Fixed space-to-depth codec standing in for a learned autoencoder:
// latent[c, y, x] = image[y*p + c/p, x*p + c%p]. Lossless and linear.
class Codec {
public:
    explicit Codec(int patch = 4);

    int patch() const { return patch_; }
    int channels() const { return patch_ * patch_; }

    Latent encode(const GrayImage& image) const;
    // Exact inverse of encode; values are clamped to [-1, 1].
    GrayImage decode(const Latent& latent) const;

private:
    int patch_;
};

} // namespace unicalli
