#include <doctest.h>

#include <cmath>

#include "unicalli/error.hpp"
#include "unicalli/sampler.hpp"

using namespace unicalli;

namespace {

void randomize(DuplexDiT<float>& model, std::uint64_t seed) {
    Rng rng(seed);
    model.weights().for_each([&](const std::string&, Matrix<float>& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(0.1 * rng.normal());
    });
}

Latent blank() {
    return Latent(16, 8, 40);
}

} // namespace

TEST_SUITE("sampler") {

TEST_CASE("one Euler step is eps minus the velocity at t = 1") {
    ModelConfig c;
    DuplexDiT<float> model(c, 1);
    randomize(model, 2);
    Rng rng(3);
    Latent content = standard_normal_like(blank(), rng);
    SampleRequest req;
    req.steps = 1;
    req.seed = 77;
    auto out = generate(model, content, req);

    Rng ri = Rng::derive(77, Stream::sampler, 0);
    Rng rm = Rng::derive(77, Stream::sampler, 1);
    Latent ei = standard_normal_like(blank(), ri);
    Latent em = standard_normal_like(blank(), rm);
    auto p = model.forward({&content, &ei, &em, 0.0, 1.0, req.cond});
    Latent vi = model.to_latent(p.patches[1]);
    Latent vm = model.to_latent(p.patches[2]);
    for (std::size_t k = 0; k < vi.size(); ++k) {
        CHECK(out.strip.data[k] == ei.data[k] - vi.data[k]);
        CHECK(out.box_map.data[k] == em.data[k] - vm.data[k]);
    }
}

TEST_CASE("one recognition step") {
    ModelConfig c;
    DuplexDiT<float> model(c, 4);
    randomize(model, 5);
    Rng rng(6);
    Latent strip = standard_normal_like(blank(), rng);
    Latent box = standard_normal_like(blank(), rng);
    SampleRequest req;
    req.mode = Mode::recognition;
    req.steps = 1;
    req.seed = 9;
    Latent out = recognize(model, strip, &box, req);
    Rng rc = Rng::derive(9, Stream::sampler, 2);
    Latent ec = standard_normal_like(blank(), rc);
    auto p = model.forward({&ec, &strip, &box, 1.0, 0.0, req.cond});
    Latent vc = model.to_latent(p.patches[0]);
    for (std::size_t k = 0; k < vc.size(); ++k) CHECK(out.data[k] == ec.data[k] - vc.data[k]);

    Latent free = recognize(model, strip, nullptr, req);
    Latent background(16, 8, 40, -1.0f);
    CHECK(free == recognize(model, strip, &background, req));
}

TEST_CASE("sampling is deterministic per seed") {
    ModelConfig c;
    DuplexDiT<float> model(c, 7);
    randomize(model, 8);
    Latent content(16, 8, 40, -1.0f);
    SampleRequest req;
    req.steps = 5;
    req.seed = 1;
    auto a = generate(model, content, req);
    auto b = generate(model, content, req);
    CHECK(a.strip == b.strip);
    CHECK(a.box_map == b.box_map);
    req.seed = 2;
    CHECK_FALSE(generate(model, content, req).strip == a.strip);
}

TEST_CASE("request validation") {
    ModelConfig c;
    DuplexDiT<float> model(c, 9);
    Latent z = blank();
    SampleRequest req;
    req.steps = 0;
    CHECK_THROWS_AS(generate(model, z, req), Error);
    req.steps = 2;
    req.mode = Mode::recognition;
    CHECK_THROWS_AS(generate(model, z, req), Error);
    req.guidance = 2.0;
    CHECK_THROWS_AS(recognize(model, z, nullptr, req), Error);
    req.mode = Mode::generation;
    CHECK_THROWS_AS(generate(model, Latent(16, 8, 38), req), Error);
}

TEST_CASE("guidance arithmetic") {
    Rng rng(10);
    Latent a = standard_normal_like(blank(), rng);
    Latent b = standard_normal_like(blank(), rng);
    CHECK(guided_velocity(a, b, 1.0) == a);
    CHECK(guided_velocity(a, b, 0.0) == b);
    Latent g2 = guided_velocity(a, b, 2.0);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(g2.data[k] == doctest::Approx(2.0 * a.data[k] - b.data[k]));
    CHECK_THROWS_AS(guided_velocity(a, Latent(16, 8, 39), 1.0), Error);
}

TEST_CASE("decoding rendered canvases") {
    Alphabet alphabet(64);
    auto atlas = alphabet.atlas(32);
    Rng rng(11);
    for (int i = 0; i < 1000; ++i) {
        std::vector<GlyphId> ids(5);
        for (auto& id : ids) id = rng.uniform_int(0, 63);
        CHECK(decode_glyphs(alphabet.render_content_canvas(ids), atlas) == ids);
    }
}

TEST_CASE("decoding survives bounded noise") {
    Alphabet alphabet(64);
    auto atlas = alphabet.atlas(32);
    // For a canvas equal to glyph i plus noise n with |n| <= a, the squared
    // distance to glyph j exceeds the distance to glyph i by
    // mean(d^2) + 2 mean(d n) >= mean(d^2) - 2a mean|d|, with d = g_i - g_j.
    const double amp = 0.1;
    double worst = 1e9;
    for (std::size_t i = 0; i < atlas.size(); ++i)
        for (std::size_t j = 0; j < atlas.size(); ++j) {
            if (i == j) continue;
            double sq = 0, ab = 0;
            for (std::size_t p = 0; p < atlas[i].pixels().size(); ++p) {
                double d = atlas[i].pixels()[p] - atlas[j].pixels()[p];
                sq += d * d;
                ab += std::abs(d);
            }
            double n = static_cast<double>(atlas[i].pixels().size());
            worst = std::min(worst, sq / n - 2 * amp * ab / n);
        }
    REQUIRE(worst > 0.0);

    Rng rng(12);
    for (int i = 0; i < 200; ++i) {
        std::vector<GlyphId> ids(5);
        for (auto& id : ids) id = rng.uniform_int(0, 63);
        GrayImage canvas = alphabet.render_content_canvas(ids);
        for (float& v : canvas.pixels()) v += static_cast<float>(rng.uniform(-amp, amp));
        CHECK(decode_glyphs(canvas, atlas) == ids);
    }
}

TEST_CASE("blank slots decode to the nearest atlas glyph") {
    Alphabet alphabet(64);
    auto atlas = alphabet.atlas(32);
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t i = 0; i < atlas.size(); ++i) {
        double d = 0;
        for (float v : atlas[i].pixels()) d += (double(v) + 1.0) * (double(v) + 1.0);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    auto ids = decode_glyphs(GrayImage(32, 160, -1.0f), atlas);
    for (GlyphId id : ids) CHECK(id == static_cast<GlyphId>(best));
}

}
