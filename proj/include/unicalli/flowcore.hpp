#pragma once

#include "unicalli/codec.hpp"
#include "unicalli/rng.hpp"

namespace unicalli {

enum class Mode { generation, recognition };

const char* to_string(Mode m);

// t_c noises the content latent; t_i noises the strip and box-map latents
// together.
struct TimestepPair {
    double t_c = 0.0;
    double t_i = 0.0;
};

struct NoisedTriple {
    Latent content;
    Latent image;
    Latent box;
    Latent eps_content;
    Latent eps_image;
    Latent eps_box;
};

// t * eps + (1 - t) * z, elementwise.
Latent noise_latent(const Latent& z, double t, const Latent& eps);

// Constant velocity of the linear path: eps - z.
Latent velocity_target(const Latent& z, const Latent& eps);

Latent standard_normal_like(const Latent& shape, Rng& rng);

// Generation, labeled:   t_i ~ U[0,1], t_c = 1 w.p. p_drop else 0.
// Generation, unlabeled: t_i ~ U[0,1], t_c = 1.
// Recognition:           t_i = 0, t_c ~ U[0,1]; unlabeled samples are rejected.
TimestepPair assign_timesteps(Mode mode, bool labeled, double p_drop, Rng& rng);

double composite_loss(Mode mode, double l_cond, double l_img, double l_box, double lambda);

// Mean squared error over all elements.
double branch_loss(const Latent& v_pred, const Latent& v_target);

NoisedTriple noise_triple(const Latent& z_c, const Latent& z_i, const Latent& z_m, const TimestepPair& t, Rng& rng);

} // namespace unicalli
