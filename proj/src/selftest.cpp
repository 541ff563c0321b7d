#include "unicalli/selftest.hpp"

#include <cmath>
#include <functional>

#include "unicalli/codec.hpp"
#include "unicalli/duplexdit.hpp"
#include "unicalli/error.hpp"
#include "unicalli/flowcore.hpp"
#include "unicalli/glyphgen.hpp"
#include "unicalli/metrics.hpp"
#include "unicalli/pipeline.hpp"

namespace unicalli {

namespace {

using Check = std::function<std::string(Rng&)>; // empty string = pass

GrayImage random_image(int h, int w, Rng& rng) {
    GrayImage img(h, w);
    for (float& v : img.pixels()) v = byte_to_unit(static_cast<std::uint8_t>(rng.uniform_int(0, 255)));
    return img;
}

std::string check_raster(Rng& rng) {
    for (int i = 0; i < 20; ++i) {
        GrayImage img = random_image(rng.uniform_int(1, 40), rng.uniform_int(1, 40), rng);
        if (!(decode_pgm(encode_pgm(img)) == img)) return "PGM round trip changed image " + std::to_string(i);
    }
    return {};
}

std::string check_codec(Rng& rng, bool corrupt) {
    Codec codec;
    for (int i = 0; i < 20; ++i) {
        GrayImage img = random_image(32, 160, rng);
        Latent z = codec.encode(img);
        if (corrupt) std::swap(z.data[0], z.data[z.data.size() / 2]);
        if (!(codec.decode(z) == img)) return "decode(encode(x)) != x for image " + std::to_string(i);
    }
    return {};
}

std::string check_noising(Rng& rng) {
    Latent z(16, 8, 40), e(16, 8, 40);
    for (int i = 0; i < 20; ++i) {
        z = standard_normal_like(z, rng);
        e = standard_normal_like(e, rng);
        if (!(noise_latent(z, 0.0, e) == z)) return "t=0 endpoint is not z";
        if (!(noise_latent(z, 1.0, e) == e)) return "t=1 endpoint is not eps";
    }
    return {};
}

std::string check_losses(Rng& rng) {
    if (composite_loss(Mode::generation, 1, 1, 1, 0.02) != 2.02) return "generation(1,1,1) != 2.02";
    if (composite_loss(Mode::recognition, 1, 1, 1, 0.02) != 1.04) return "recognition(1,1,1) != 1.04";
    for (int i = 0; i < 200; ++i) {
        double a = rng.uniform(0, 5), b = rng.uniform(0, 5), c = rng.uniform(0, 5), lam = rng.uniform(0, 1);
        double s = composite_loss(Mode::generation, a, b, c, lam) + composite_loss(Mode::recognition, a, b, c, lam);
        if (std::abs(s - (1 + lam) * (a + b + c)) > 1e-9) return "loss duality violated";
    }
    return {};
}

std::string check_timesteps(Rng& rng) {
    for (int i = 0; i < 2000; ++i) {
        auto g = assign_timesteps(Mode::generation, true, 0.05, rng);
        if (!(g.t_c == 0.0 || g.t_c == 1.0) || g.t_i < 0.0 || g.t_i > 1.0) return "generation timesteps out of rule";
        auto u = assign_timesteps(Mode::generation, false, 0.05, rng);
        if (u.t_c != 1.0) return "unlabeled sample trained with t_c != 1";
        auto r = assign_timesteps(Mode::recognition, true, 0.05, rng);
        if (r.t_i != 0.0 || r.t_c < 0.0 || r.t_c > 1.0) return "recognition timesteps out of rule";
    }
    try {
        assign_timesteps(Mode::recognition, false, 0.05, rng);
        return "recognition accepted an unlabeled sample";
    } catch (const Error&) {
    }
    return {};
}

std::string check_model(Rng& rng) {
    ModelConfig c;
    DuplexDiT<float> model(c, rng.next());
    Latent a(16, 8, 40), b(16, 8, 40), m(16, 8, 40);
    for (int i = 0; i < 3; ++i) {
        a = standard_normal_like(a, rng);
        b = standard_normal_like(b, rng);
        m = standard_normal_like(m, rng);
        ModelInput in{&a, &b, &m, rng.uniform(), rng.uniform(), {}};
        auto pred = model.forward(in);
        for (const auto& p : pred.patches)
            if (!p.isZero(0.0)) return "fresh model predicted a non-zero velocity";
    }
    return {};
}

std::string check_rope(Rng& rng) {
    ModelConfig c;
    Matrix<double> base = compute_rope({c.grid_rows(), c.grid_cols()}, c.head_dim(), c.rope_base);
    Matrix<double> ec(c.heads, c.head_dim() / 2), em(c.heads, c.head_dim() / 2);
    for (Eigen::Index i = 0; i < ec.size(); ++i) {
        ec.data()[i] = rng.normal();
        em.data()[i] = rng.normal();
    }
    auto dup = duplicate_rope<double>(base, ec, em);
    for (Eigen::Index r = 1; r < base.rows(); ++r) {
        for (std::size_t k : {std::size_t{0}, std::size_t{2}}) {
            if (!((dup[k].row(r) - dup[1].row(r)) == (dup[k].row(0) - dup[1].row(0))))
                return "angle offset depends on position";
        }
    }
    auto zero = duplicate_rope<double>(base, ec * 0.0, em * 0.0);
    if (!(zero[0] == zero[1] && zero[2] == zero[1])) return "zero offsets do not reproduce the image angles";
    return {};
}

std::string check_boxes(Rng& rng) {
    for (int i = 0; i < 20; ++i) {
        std::vector<CharBox> boxes;
        int x = rng.uniform_int(0, 4);
        while (x + 3 < 160) {
            int w = rng.uniform_int(1, 12);
            if (x + w > 160) break;
            int y0 = rng.uniform_int(0, 20);
            boxes.push_back({x, y0, x + w, rng.uniform_int(y0 + 1, 32)});
            x += w + rng.uniform_int(1, 6);
        }
        auto back = extract_boxes(rasterize_box_map(boxes, 32, 160));
        if (back != boxes) return "raster round trip changed a box set";
    }
    return {};
}

std::string check_binarization(Rng& rng) {
    Alphabet alphabet(16);
    SynthOptions opt;
    for (int i = 0; i < 10; ++i) {
        Sample s = synthesize_sample(alphabet, opt, rng);
        auto a = binarize_with_polarity(s.strip);
        auto b = binarize_with_polarity(invert(s.strip));
        if (a.polarity != Polarity::light_on_dark || b.polarity != Polarity::dark_on_light) return "wrong polarity flag";
        if (!(a.mask == b.mask)) return "inverted strip gave a different mask";
    }
    return {};
}

std::string check_alphabet(Rng&) {
    Alphabet alphabet;
    if (!(alphabet.min_pairwise_l1() > 0.0)) return "two glyphs render identically";
    return {};
}

std::string check_metrics(Rng& rng) {
    for (int i = 0; i < 10; ++i) {
        GrayImage a = random_image(32, 40, rng), b = random_image(32, 40, rng), c = random_image(32, 40, rng);
        if (l1(a, a) != 0.0 || l1(a, c) > l1(a, b) + l1(b, c) + 1e-12) return "l1 bounds or triangle inequality";
        double s = ssim(a, b);
        if (s < -1.0 || s > 1.0 || std::abs(s - ssim(b, a)) > 1e-12) return "ssim out of range or asymmetric";
        if (std::abs(ssim(a, a) - 1.0) > 1e-9) return "ssim(a, a) != 1";
    }
    return {};
}

} // namespace

std::vector<SelftestGroup> run_selftest(const SelftestOptions& options) {
    const std::vector<std::pair<std::string, Check>> groups = {
        {"raster-io", check_raster},
        {"codec-roundtrip", [&](Rng& r) { return check_codec(r, options.corrupt_codec); }},
        {"noising", check_noising},
        {"composite-loss", check_losses},
        {"timesteps", check_timesteps},
        {"zero-init", check_model},
        {"duplicate-rope", check_rope},
        {"box-roundtrip", check_boxes},
        {"binarization", check_binarization},
        {"alphabet", check_alphabet},
        {"metrics", check_metrics},
    };
    std::vector<SelftestGroup> out;
    std::uint64_t k = 0;
    for (const auto& [name, check] : groups) {
        Rng rng = Rng::derive(options.seed, Stream::synth, 0x5e1f, k++);
        SelftestGroup g;
        g.name = name;
        try {
            g.detail = check(rng);
            g.passed = g.detail.empty();
        } catch (const std::exception& e) {
            g.detail = std::string("exception: ") + e.what();
        }
        out.push_back(std::move(g));
    }
    return out;
}

} // namespace unicalli
