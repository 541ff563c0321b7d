#pragma once

#include <cstdint>
#include <vector>

#include "unicalli/duplexdit.hpp"
#include "unicalli/flowcore.hpp"

namespace unicalli {

struct SampleRequest {
    Mode mode = Mode::generation;
    int steps = 50;
    double guidance = 1.0; // 1 = a single conditional pass
    std::uint64_t seed = 0;
    ConditionVector cond;
};

struct GeneratedStrip {
    Latent strip;
    Latent box_map;
};

// Starts the strip and box map from seeded noise at t_i = 1, keeps the
// content clean at t_c = 0 and integrates z <- z - dt * v down to t = 0.
GeneratedStrip generate(const DuplexDiT<float>& model, const Latent& content, const SampleRequest& req);

// Starts the content from seeded noise at t_c = 1 with the strip and box map
// clean at t_i = 0. A null box map selects the box-free variant, which feeds
// an all-background map instead.
Latent recognize(const DuplexDiT<float>& model, const Latent& strip, const Latent* box_map, const SampleRequest& req);

// v_uncond + g * (v_cond - v_uncond), evaluated as (1 - g) * v_uncond + g * v_cond
Latent guided_velocity(const Latent& v_cond, const Latent& v_uncond, double g);

// Nearest atlas glyph per slot by mean squared distance; ties go to the
// lowest id.
std::vector<GlyphId> decode_glyphs(const GrayImage& canvas, const std::vector<GrayImage>& atlas,
                                   const StripGeometry& geometry = {});

} // namespace unicalli
