#include "unicalli/flowcore.hpp"

#include <cmath>
#include <string>

#include "unicalli/error.hpp"

namespace unicalli {

const char* to_string(Mode m) {
    return m == Mode::generation ? "generation" : "recognition";
}

namespace {

void require_same_shape(const Latent& a, const Latent& b, const char* op) {
    if (!a.same_shape(b)) {
        throw Error(std::string(op) + ": latent shape mismatch");
    }
}

} // namespace

Latent noise_latent(const Latent& z, double t, const Latent& eps) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw Error("noise_latent: t=" + std::to_string(t) + " outside [0, 1]");
    }
    require_same_shape(z, eps, "noise_latent");
    const float tf = static_cast<float>(t);
    const float keep = 1.0f - tf;
    Latent out = z;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = tf * eps.data[i] + keep * z.data[i];
    return out;
}

Latent velocity_target(const Latent& z, const Latent& eps) {
    require_same_shape(z, eps, "velocity_target");
    Latent out = z;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = eps.data[i] - z.data[i];
    return out;
}

Latent standard_normal_like(const Latent& shape, Rng& rng) {
    Latent out(shape.channels, shape.height, shape.width);
    for (float& v : out.data) v = static_cast<float>(rng.normal());
    return out;
}

TimestepPair assign_timesteps(Mode mode, bool labeled, double p_drop, Rng& rng) {
    if (!(p_drop >= 0.0 && p_drop <= 1.0)) {
        throw Error("p_drop must lie in [0, 1]");
    }
    TimestepPair t;
    if (mode == Mode::generation) {
        t.t_i = rng.uniform();
        bool drop = rng.bernoulli(p_drop);
        t.t_c = (!labeled || drop) ? 1.0 : 0.0;
    } else {
        if (!labeled) {
            throw Error("recognition requested on an unlabeled sample");
        }
        t.t_i = 0.0;
        t.t_c = rng.uniform();
    }
    return t;
}

double composite_loss(Mode mode, double l_cond, double l_img, double l_box, double lambda) {
    if (!(l_cond >= 0.0 && l_img >= 0.0 && l_box >= 0.0)) {
        throw Error("composite_loss: branch losses must be non-negative");
    }
    if (!(lambda >= 0.0)) {
        throw Error("composite_loss: lambda must be non-negative");
    }
    return mode == Mode::generation ? l_img + l_box + lambda * l_cond : l_cond + lambda * (l_img + l_box);
}

double branch_loss(const Latent& v_pred, const Latent& v_target) {
    require_same_shape(v_pred, v_target, "branch_loss");
    if (v_pred.data.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < v_pred.data.size(); ++i) {
        double d = static_cast<double>(v_pred.data[i]) - v_target.data[i];
        s += d * d;
    }
    return s / static_cast<double>(v_pred.data.size());
}

NoisedTriple noise_triple(const Latent& z_c, const Latent& z_i, const Latent& z_m, const TimestepPair& t, Rng& rng) {
    NoisedTriple out;
    out.eps_content = standard_normal_like(z_c, rng);
    out.eps_image = standard_normal_like(z_i, rng);
    out.eps_box = standard_normal_like(z_m, rng);
    out.content = noise_latent(z_c, t.t_c, out.eps_content);
    out.image = noise_latent(z_i, t.t_i, out.eps_image);
    out.box = noise_latent(z_m, t.t_i, out.eps_box);
    return out;
}

} // namespace unicalli
