#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "unicalli/codec.hpp"
#include "unicalli/glyphgen.hpp"

namespace unicalli {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Modality { content = 0, image = 1, box = 2 };
inline constexpr std::array<Modality, 3> kModalities = {Modality::content, Modality::image, Modality::box};
const char* to_string(Modality m);

struct ModelConfig {
    int latent_channels = 16;
    int latent_height = 8;
    int latent_width = 40;
    int token_patch = 2;
    int d_model = 64;
    int heads = 4;
    int blocks = 2;
    int mlp_ratio = 4;
    int alphabet = 64;
    int styles = 8;
    int scripts = 5;
    double rope_base = 10000.0;

    int head_dim() const { return d_model / heads; }
    int patch_dim() const { return latent_channels * token_patch * token_patch; }
    int grid_rows() const { return latent_height / token_patch; }
    int grid_cols() const { return latent_width / token_patch; }
    int tokens_per_modality() const { return grid_rows() * grid_cols(); }

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct TokenGrid {
    int rows = 0;
    int cols = 0;

    int size() const { return rows * cols; }
    int y(int token) const { return token / cols; }
    int x(int token) const { return token % cols; }
};

template <typename T>
struct BlockWeights {
    Matrix<T> mod_w1, mod_b1, mod_w2, mod_b2;
    Matrix<T> qkv_w, qkv_b, attn_w, attn_b;
    Matrix<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

// Every learnable array of the model. Gradients and optimizer moments reuse
// the same structure.
template <typename T>
struct Weights {
    std::array<Matrix<T>, 3> in_w, in_b, out_w, out_b;
    Matrix<T> emb_style, emb_script, emb_source, emb_polarity;
    Matrix<T> emod_c, emod_m; // heads x head_dim/2 rotary angle offsets
    std::vector<BlockWeights<T>> blocks;
    Matrix<T> final_w, final_b;

    template <typename F>
    void for_each(F&& f) {
        visit(*this, f);
    }
    template <typename F>
    void for_each(F&& f) const {
        visit(*this, f);
    }

    Weights zeros_like() const {
        Weights out = *this;
        out.for_each([](const std::string&, Matrix<T>& m) { m.setZero(); });
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each([&](const std::string&, const Matrix<T>& m) { n += static_cast<std::size_t>(m.size()); });
        return n;
    }

private:
    template <typename Self, typename F>
    static void visit(Self& s, F& f) {
        for (int k = 0; k < 3; ++k) {
            std::string m = to_string(kModalities[static_cast<std::size_t>(k)]);
            f("in." + m + ".w", s.in_w[static_cast<std::size_t>(k)]);
            f("in." + m + ".b", s.in_b[static_cast<std::size_t>(k)]);
        }
        f("emb.style", s.emb_style);
        f("emb.script", s.emb_script);
        f("emb.source", s.emb_source);
        f("emb.polarity", s.emb_polarity);
        f("emod.content", s.emod_c);
        f("emod.box", s.emod_m);
        for (std::size_t b = 0; b < s.blocks.size(); ++b) {
            auto& bw = s.blocks[b];
            std::string p = "block" + std::to_string(b) + ".";
            f(p + "mod.w1", bw.mod_w1);
            f(p + "mod.b1", bw.mod_b1);
            f(p + "mod.w2", bw.mod_w2);
            f(p + "mod.b2", bw.mod_b2);
            f(p + "qkv.w", bw.qkv_w);
            f(p + "qkv.b", bw.qkv_b);
            f(p + "attn_out.w", bw.attn_w);
            f(p + "attn_out.b", bw.attn_b);
            f(p + "mlp.w1", bw.mlp_w1);
            f(p + "mlp.b1", bw.mlp_b1);
            f(p + "mlp.w2", bw.mlp_w2);
            f(p + "mlp.b2", bw.mlp_b2);
        }
        f("final.w", s.final_w);
        f("final.b", s.final_b);
        for (int k = 0; k < 3; ++k) {
            std::string m = to_string(kModalities[static_cast<std::size_t>(k)]);
            f("out." + m + ".w", s.out_w[static_cast<std::size_t>(k)]);
            f("out." + m + ".b", s.out_b[static_cast<std::size_t>(k)]);
        }
    }
};

// Non-overlapping p x p latent patches, one row per token in row-major grid
// order; feature index (channel * p + dy) * p + dx.
template <typename T>
Matrix<T> patchify(const Latent& z, int token_patch);
template <typename T>
Latent unpatchify(const Matrix<T>& patches, int channels, int height, int width, int token_patch);

// Rotary angles live on a dyadic lattice of 2^-32 rad so that adding and
// subtracting offsets is exact in double precision.
double snap_angle(double a);

// Axial 2D rotary angles, one row per grid position and head_dim/2 columns:
// the first half rotate with y, the second half with x, both at frequencies
// base^(-2k / (head_dim/2)).
Matrix<double> compute_rope(const TokenGrid& grid, int head_dim, double base = 10000.0);

// Replicates the image angles to all heads and offsets the content and
// box-map copies by their per-head embeddings. Returned in modality order
// (content, image, box); each is positions x (heads * head_dim/2).
template <typename T>
std::array<Matrix<double>, 3> duplicate_rope(const Matrix<double>& image_angles, const Matrix<T>& emod_c,
                                             const Matrix<T>& emod_m);

// Rotates consecutive feature pairs of every head in place.
template <typename T>
void apply_rotary(Matrix<T>& features, const Matrix<double>& angles, int heads);

template <typename T>
struct ModulationVectors {
    Matrix<T> shift_attn, scale_attn, gate_attn; // scale includes the +1
    Matrix<T> shift_mlp, scale_mlp, gate_mlp;
};

struct ModelInput {
    const Latent* content = nullptr;
    const Latent* image = nullptr;
    const Latent* box = nullptr;
    double t_c = 0.0;
    double t_i = 0.0;
    ConditionVector cond;
    // Diagnostic switch: drop box-map tokens from the sequence entirely.
    bool include_box = true;
};

template <typename T>
struct Prediction {
    std::array<Matrix<T>, 3> patches; // tokens x patch_dim per modality
};

template <typename T>
struct ForwardCache;

template <typename T>
class DuplexDiT {
public:
    DuplexDiT(const ModelConfig& config, std::uint64_t seed);
    DuplexDiT(const ModelConfig& config, Weights<T> weights);

    const ModelConfig& config() const { return config_; }
    TokenGrid grid() const { return {config_.grid_rows(), config_.grid_cols()}; }
    Weights<T>& weights() { return weights_; }
    const Weights<T>& weights() const { return weights_; }

    // Patchify and project with the modality's own input projection.
    Matrix<T> tokenize(const Latent& z, Modality modality) const;
    Matrix<T> condition_embedding(double t, const ConditionVector& cond) const;
    ModulationVectors<T> modulate(int block, double t, const ConditionVector& cond) const;

    // Passing a cache records activations for backward.
    Prediction<T> forward(const ModelInput& input, ForwardCache<T>* cache = nullptr) const;
    std::vector<Prediction<T>> forward_batch(const std::vector<ModelInput>& inputs) const;

    // Accumulates dLoss/dparameters into `grads` given dLoss/dpatches.
    void backward(const ForwardCache<T>& cache, const Prediction<T>& d_out, Weights<T>& grads) const;

    Latent to_latent(const Matrix<T>& patches) const;

private:
    ModelConfig config_;
    Weights<T> weights_;
};

template <typename T>
Weights<T> init_weights(const ModelConfig& config, std::uint64_t seed);

// Recorded activations of one forward pass.
template <typename T>
struct ForwardCache {
    struct Block {
        std::array<Matrix<T>, 2> mod_hpre, mod_h, mod; // per timestep group
        Matrix<T> x_in, xhat1, rstd1, xm1, q, k, v, attn_cat, attn_out;
        std::vector<Matrix<T>> probs; // per head
        Matrix<T> xhat2, rstd2, xm2, h_pre, h_act, mlp_out;
    };
    bool valid = false;
    std::vector<Modality> segments;
    std::vector<Matrix<T>> patches;   // per segment
    std::vector<Matrix<double>> angles; // per segment
    std::array<Matrix<T>, 2> embed;   // content group, image/box group
    ConditionVector cond;
    std::vector<Block> blocks;
    std::array<Matrix<T>, 2> final_h, final_mod;
    Matrix<T> xhat_f, rstd_f, xm_f;
};

extern template class DuplexDiT<float>;
extern template class DuplexDiT<double>;

} // namespace unicalli
