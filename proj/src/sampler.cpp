#include "unicalli/sampler.hpp"

#include <cmath>
#include <limits>

#include "unicalli/error.hpp"

namespace unicalli {

namespace {

enum : std::uint64_t { kNoiseImage = 0, kNoiseBox = 1, kNoiseContent = 2 };

Latent velocity(const DuplexDiT<float>& model, const Prediction<float>& pred, Modality m, int step) {
    Latent v = model.to_latent(pred.patches[static_cast<std::size_t>(m)]);
    for (float x : v.data) {
        if (!std::isfinite(x)) {
            throw Error(std::string("sampler: non-finite ") + to_string(m) + " velocity at step " + std::to_string(step));
        }
    }
    return v;
}

void euler_update(Latent& z, const Latent& v, double dt) {
    const auto fdt = static_cast<float>(dt);
    for (std::size_t i = 0; i < z.data.size(); ++i) z.data[i] -= fdt * v.data[i];
}

void check_request(const SampleRequest& req, Mode expected) {
    if (req.mode != expected) {
        throw Error(std::string("sampler: request mode is ") + to_string(req.mode) + ", expected " + to_string(expected));
    }
    if (req.steps < 1) throw Error("sampler: steps must be >= 1");
    if (!(req.guidance >= 0.0)) throw Error("sampler: guidance must be >= 0");
}

void check_shape(const DuplexDiT<float>& model, const Latent& z, const char* what) {
    const auto& c = model.config();
    if (z.channels != c.latent_channels || z.height != c.latent_height || z.width != c.latent_width) {
        throw Error(std::string("sampler: ") + what + " latent shape does not match the model");
    }
}

} // namespace

Latent guided_velocity(const Latent& v_cond, const Latent& v_uncond, double g) {
    if (!v_cond.same_shape(v_uncond)) throw Error("guided_velocity: shape mismatch");
    // Weighted form so that g = 1 and g = 0 reproduce their inputs exactly.
    Latent out = v_uncond;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = static_cast<float>((1.0 - g) * v_uncond.data[i] + g * v_cond.data[i]);
    return out;
}

GeneratedStrip generate(const DuplexDiT<float>& model, const Latent& content, const SampleRequest& req) {
    check_request(req, Mode::generation);
    check_shape(model, content, "content");
    Rng rng_i = Rng::derive(req.seed, Stream::sampler, kNoiseImage);
    Rng rng_m = Rng::derive(req.seed, Stream::sampler, kNoiseBox);
    GeneratedStrip out{standard_normal_like(content, rng_i), standard_normal_like(content, rng_m)};

    const bool guided = req.guidance != 1.0;
    Latent eps_c;
    if (guided) {
        Rng rng_c = Rng::derive(req.seed, Stream::sampler, kNoiseContent);
        eps_c = standard_normal_like(content, rng_c);
    }

    const double dt = 1.0 / req.steps;
    for (int s = 0; s < req.steps; ++s) {
        const double t = 1.0 - s * dt;
        ModelInput in{&content, &out.strip, &out.box_map, 0.0, t, req.cond};
        Prediction<float> pred = model.forward(in);
        Latent v_i = velocity(model, pred, Modality::image, s);
        Latent v_m = velocity(model, pred, Modality::box, s);
        if (guided) {
            ModelInput un{&eps_c, &out.strip, &out.box_map, 1.0, t, req.cond};
            Prediction<float> up = model.forward(un);
            v_i = guided_velocity(v_i, velocity(model, up, Modality::image, s), req.guidance);
            v_m = guided_velocity(v_m, velocity(model, up, Modality::box, s), req.guidance);
        }
        euler_update(out.strip, v_i, dt);
        euler_update(out.box_map, v_m, dt);
    }
    return out;
}

Latent recognize(const DuplexDiT<float>& model, const Latent& strip, const Latent* box_map, const SampleRequest& req) {
    check_request(req, Mode::recognition);
    if (req.guidance != 1.0) throw Error("sampler: guidance is only defined for generation");
    check_shape(model, strip, "strip");
    Latent blank;
    if (box_map == nullptr) {
        blank = Latent(strip.channels, strip.height, strip.width, -1.0f);
        box_map = &blank;
    }
    check_shape(model, *box_map, "box map");
    Rng rng = Rng::derive(req.seed, Stream::sampler, kNoiseContent);
    Latent z = standard_normal_like(strip, rng);
    const double dt = 1.0 / req.steps;
    for (int s = 0; s < req.steps; ++s) {
        const double t = 1.0 - s * dt;
        ModelInput in{&z, &strip, box_map, t, 0.0, req.cond};
        Prediction<float> pred = model.forward(in);
        euler_update(z, velocity(model, pred, Modality::content, s), dt);
    }
    return z;
}

std::vector<GlyphId> decode_glyphs(const GrayImage& canvas, const std::vector<GrayImage>& atlas,
                                   const StripGeometry& geometry) {
    const int slot = geometry.slot;
    if (canvas.height() != slot || canvas.width() != slot * geometry.slots) {
        throw Error("decode_glyphs: canvas is " + std::to_string(canvas.height()) + "x" + std::to_string(canvas.width()) +
                    ", expected " + std::to_string(slot) + "x" + std::to_string(slot * geometry.slots));
    }
    if (atlas.empty()) throw Error("decode_glyphs: empty atlas");
    for (const auto& g : atlas) {
        if (g.height() != slot || g.width() != slot) throw Error("decode_glyphs: atlas glyph size mismatch");
    }
    std::vector<GlyphId> ids;
    for (int k = 0; k < geometry.slots; ++k) {
        double best = std::numeric_limits<double>::infinity();
        GlyphId best_id = 0;
        for (std::size_t id = 0; id < atlas.size(); ++id) {
            double sum = 0.0;
            for (int y = 0; y < slot; ++y) {
                for (int x = 0; x < slot; ++x) {
                    double d = static_cast<double>(canvas.at(y, k * slot + x)) - atlas[id].at(y, x);
                    sum += d * d;
                }
            }
            double mse = sum / (slot * slot);
            if (mse < best) {
                best = mse;
                best_id = static_cast<GlyphId>(id);
            }
        }
        ids.push_back(best_id);
    }
    return ids;
}

} // namespace unicalli
