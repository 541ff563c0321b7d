#include "unicalli/duplexdit.hpp"

#include <cmath>
#include <random>

#include "unicalli/error.hpp"
#include "unicalli/rng.hpp"

namespace unicalli {

const char* to_string(Modality m) {
    switch (m) {
    case Modality::content: return "content";
    case Modality::image: return "image";
    case Modality::box: return "box";
    }
    return "?";
}

void ModelConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw Error("model config: " + what);
    };
    require(latent_channels > 0 && latent_height > 0 && latent_width > 0, "latent dims must be positive");
    require(token_patch > 0 && latent_height % token_patch == 0 && latent_width % token_patch == 0,
            "latent dims must be divisible by token_patch");
    require(heads > 0 && d_model > 0 && d_model % heads == 0, "d_model must be divisible by heads");
    require(head_dim() % 4 == 0, "head_dim must be divisible by 4");
    require(blocks >= 0 && mlp_ratio > 0, "blocks >= 0 and mlp_ratio > 0");
    require(alphabet > 0 && styles > 0 && scripts > 0, "alphabet, styles and scripts must be positive");
    require(rope_base > 1.0, "rope_base must exceed 1");
}

namespace {

constexpr double kLayerNormEps = 1e-6;
constexpr std::size_t idx(Modality m) { return static_cast<std::size_t>(m); }
constexpr int group_of(Modality m) { return m == Modality::content ? 0 : 1; }

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
T silu(T x) {
    return x * sigmoid(x);
}

template <typename T>
T silu_grad(T x) {
    T s = sigmoid(x);
    return s * (T(1) + x * (T(1) - s));
}

template <typename T>
constexpr T kGeluC = T(0.7978845608028654); // sqrt(2/pi)

template <typename T>
T gelu(T x) {
    T u = kGeluC<T> * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
    T u = kGeluC<T> * (x + T(0.044715) * x * x * x);
    T th = std::tanh(u);
    T du = kGeluC<T> * (T(1) + T(3) * T(0.044715) * x * x);
    return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

template <typename T>
void layer_norm(const Matrix<T>& x, Matrix<T>& xhat, Matrix<T>& rstd) {
    xhat.resize(x.rows(), x.cols());
    rstd.resize(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        T mean = x.row(r).mean();
        T var = (x.row(r).array() - mean).square().mean();
        T rs = T(1) / std::sqrt(var + T(kLayerNormEps));
        xhat.row(r) = (x.row(r).array() - mean) * rs;
        rstd(r, 0) = rs;
    }
}

template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dxhat, const Matrix<T>& xhat, const Matrix<T>& rstd) {
    Matrix<T> dx(dxhat.rows(), dxhat.cols());
    for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
        T m1 = dxhat.row(r).mean();
        T m2 = (dxhat.row(r).array() * xhat.row(r).array()).mean();
        dx.row(r) = rstd(r, 0) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
    }
    return dx;
}

template <typename T>
Matrix<T> timestep_embedding(double t, int dim) {
    Matrix<T> e(1, dim);
    int half = dim / 2;
    for (int k = 0; k < half; ++k) {
        double freq = std::exp(-std::log(10000.0) * k / half);
        double a = 1000.0 * t * freq;
        e(0, k) = static_cast<T>(std::cos(a));
        e(0, half + k) = static_cast<T>(std::sin(a));
    }
    return e;
}

// Rotates (or inverse-rotates) feature pairs of rows [row0, row0 + angles.rows()).
template <typename T>
void rotate_rows(Matrix<T>& m, Eigen::Index row0, const Matrix<T>& cos_a, const Matrix<T>& sin_a, int heads,
                 bool inverse) {
    const Eigen::Index pairs = cos_a.cols() / heads;
    const Eigen::Index head_dim = 2 * pairs;
    for (Eigen::Index r = 0; r < cos_a.rows(); ++r) {
        T* row = m.row(row0 + r).data();
        for (int h = 0; h < heads; ++h) {
            for (Eigen::Index p = 0; p < pairs; ++p) {
                T c = cos_a(r, h * pairs + p);
                T s = inverse ? -sin_a(r, h * pairs + p) : sin_a(r, h * pairs + p);
                T& a = row[h * head_dim + 2 * p];
                T& b = row[h * head_dim + 2 * p + 1];
                T a0 = a;
                a = a0 * c - b * s;
                b = a0 * s + b * c;
            }
        }
    }
}

// Per-row modulation: out = xhat * scale_g + shift_g over each segment.
template <typename T>
Matrix<T> modulate_rows(const Matrix<T>& xhat, const std::vector<Modality>& segments, Eigen::Index n,
                        const std::array<Matrix<T>, 2>& mod, int shift_idx, int scale_idx, int d) {
    Matrix<T> out(xhat.rows(), xhat.cols());
    for (std::size_t s = 0; s < segments.size(); ++s) {
        const auto& m = mod[static_cast<std::size_t>(group_of(segments[s]))];
        auto shift = m.row(0).segment(shift_idx * d, d);
        Matrix<T> scale = (m.row(0).segment(scale_idx * d, d).array() + T(1)).matrix();
        auto rows = static_cast<Eigen::Index>(s) * n;
        out.middleRows(rows, n) =
            (xhat.middleRows(rows, n).array().rowwise() * scale.row(0).array()).rowwise() + shift.array();
    }
    return out;
}

// x += gate_g * branch over each segment.
template <typename T>
void gated_residual(Matrix<T>& x, const Matrix<T>& branch, const std::vector<Modality>& segments, Eigen::Index n,
                    const std::array<Matrix<T>, 2>& mod, int gate_idx, int d) {
    for (std::size_t s = 0; s < segments.size(); ++s) {
        const auto& m = mod[static_cast<std::size_t>(group_of(segments[s]))];
        auto gate = m.row(0).segment(gate_idx * d, d);
        auto rows = static_cast<Eigen::Index>(s) * n;
        x.middleRows(rows, n).array() += branch.middleRows(rows, n).array().rowwise() * gate.array();
    }
}

// Backward of out = xhat * (1 + scale) + shift: accumulates shift/scale
// gradients into dmod and returns dxhat.
template <typename T>
Matrix<T> modulate_rows_backward(const Matrix<T>& dout, const Matrix<T>& xhat, const std::vector<Modality>& segments,
                                 Eigen::Index n, const std::array<Matrix<T>, 2>& mod, std::array<Matrix<T>, 2>& dmod,
                                 int shift_idx, int scale_idx, int d) {
    Matrix<T> dxhat(dout.rows(), dout.cols());
    for (std::size_t s = 0; s < segments.size(); ++s) {
        auto g = static_cast<std::size_t>(group_of(segments[s]));
        auto rows = static_cast<Eigen::Index>(s) * n;
        auto dblock = dout.middleRows(rows, n);
        dmod[g].row(0).segment(shift_idx * d, d) += dblock.colwise().sum();
        dmod[g].row(0).segment(scale_idx * d, d) +=
            (dblock.array() * xhat.middleRows(rows, n).array()).matrix().colwise().sum();
        Matrix<T> scale = (mod[g].row(0).segment(scale_idx * d, d).array() + T(1)).matrix();
        dxhat.middleRows(rows, n) = dblock.array().rowwise() * scale.row(0).array();
    }
    return dxhat;
}

template <typename T>
void gated_residual_backward(const Matrix<T>& dx, const Matrix<T>& branch, const std::vector<Modality>& segments,
                             Eigen::Index n, const std::array<Matrix<T>, 2>& mod, std::array<Matrix<T>, 2>& dmod,
                             int gate_idx, int d, Matrix<T>& dbranch) {
    dbranch.resize(dx.rows(), dx.cols());
    for (std::size_t s = 0; s < segments.size(); ++s) {
        auto g = static_cast<std::size_t>(group_of(segments[s]));
        auto rows = static_cast<Eigen::Index>(s) * n;
        dmod[g].row(0).segment(gate_idx * d, d) +=
            (dx.middleRows(rows, n).array() * branch.middleRows(rows, n).array()).matrix().colwise().sum();
        dbranch.middleRows(rows, n) =
            dx.middleRows(rows, n).array().rowwise() * mod[g].row(0).segment(gate_idx * d, d).array();
    }
}

template <typename T>
void fill_normal(Matrix<T>& m, int rows, int cols, double stddev, Rng& rng) {
    m.resize(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(stddev * rng.normal());
}

template <typename T>
void fill_zero(Matrix<T>& m, int rows, int cols) {
    m = Matrix<T>::Zero(rows, cols);
}

} // namespace

template <typename T>
Matrix<T> patchify(const Latent& z, int p) {
    if (z.height % p != 0 || z.width % p != 0) {
        throw Error("tokenize: latent " + std::to_string(z.height) + "x" + std::to_string(z.width) +
                    " not divisible by token patch " + std::to_string(p));
    }
    const int rows = z.height / p;
    const int cols = z.width / p;
    Matrix<T> out(rows * cols, z.channels * p * p);
    for (int ty = 0; ty < rows; ++ty)
        for (int tx = 0; tx < cols; ++tx)
            for (int c = 0; c < z.channels; ++c)
                for (int dy = 0; dy < p; ++dy)
                    for (int dx = 0; dx < p; ++dx)
                        out(ty * cols + tx, (c * p + dy) * p + dx) = static_cast<T>(z.at(c, ty * p + dy, tx * p + dx));
    return out;
}

template <typename T>
Latent unpatchify(const Matrix<T>& patches, int channels, int height, int width, int p) {
    const int cols = width / p;
    if (patches.rows() != (height / p) * cols || patches.cols() != channels * p * p) {
        throw Error("unpatchify: patch matrix shape mismatch");
    }
    Latent z(channels, height, width);
    for (int ty = 0; ty < height / p; ++ty)
        for (int tx = 0; tx < cols; ++tx)
            for (int c = 0; c < channels; ++c)
                for (int dy = 0; dy < p; ++dy)
                    for (int dx = 0; dx < p; ++dx)
                        z.at(c, ty * p + dy, tx * p + dx) = static_cast<float>(patches(ty * cols + tx, (c * p + dy) * p + dx));
    return z;
}

double snap_angle(double a) {
    return std::ldexp(std::nearbyint(std::ldexp(a, 32)), -32);
}

Matrix<double> compute_rope(const TokenGrid& grid, int head_dim, double base) {
    if (head_dim <= 0 || head_dim % 4 != 0) {
        throw Error("compute_rope: head_dim " + std::to_string(head_dim) + " not divisible by 4");
    }
    const int pairs = head_dim / 2;
    const int half = pairs / 2;
    Matrix<double> angles(grid.size(), pairs);
    for (int t = 0; t < grid.size(); ++t) {
        for (int k = 0; k < half; ++k) {
            double freq = std::pow(base, -2.0 * k / pairs);
            angles(t, k) = snap_angle(grid.y(t) * freq);
            angles(t, half + k) = snap_angle(grid.x(t) * freq);
        }
    }
    return angles;
}

template <typename T>
std::array<Matrix<double>, 3> duplicate_rope(const Matrix<double>& image_angles, const Matrix<T>& emod_c,
                                             const Matrix<T>& emod_m) {
    const auto pairs = image_angles.cols();
    if (emod_c.cols() != pairs || emod_m.cols() != pairs || emod_c.rows() != emod_m.rows() || emod_c.rows() < 1) {
        throw Error("duplicate_rope: modulation embedding shape mismatch");
    }
    const auto heads = emod_c.rows();
    Matrix<double> base = image_angles.unaryExpr([](double a) { return snap_angle(a); });
    Matrix<double> off_c = emod_c.template cast<double>().unaryExpr([](double a) { return snap_angle(a); });
    Matrix<double> off_m = emod_m.template cast<double>().unaryExpr([](double a) { return snap_angle(a); });
    std::array<Matrix<double>, 3> out;
    for (auto& m : out) m.resize(base.rows(), heads * pairs);
    for (Eigen::Index h = 0; h < heads; ++h) {
        out[idx(Modality::image)].middleCols(h * pairs, pairs) = base;
        out[idx(Modality::content)].middleCols(h * pairs, pairs) = base.rowwise() + off_c.row(h);
        out[idx(Modality::box)].middleCols(h * pairs, pairs) = base.rowwise() + off_m.row(h);
    }
    return out;
}

template <typename T>
void apply_rotary(Matrix<T>& features, const Matrix<double>& angles, int heads) {
    if (features.rows() != angles.rows() || features.cols() != 2 * angles.cols()) {
        throw Error("apply_rotary: shape mismatch");
    }
    Matrix<T> c = angles.array().cos().matrix().template cast<T>();
    Matrix<T> s = angles.array().sin().matrix().template cast<T>();
    rotate_rows(features, 0, c, s, heads, false);
}

template <typename T>
Weights<T> init_weights(const ModelConfig& c, std::uint64_t seed) {
    c.validate();
    Rng rng = Rng::derive(seed, Stream::init);
    const int d = c.d_model;
    const int pd = c.patch_dim();
    const int hidden = d * c.mlp_ratio;
    Weights<T> w;
    for (std::size_t k = 0; k < 3; ++k) {
        fill_normal(w.in_w[k], pd, d, 1.0 / std::sqrt(pd), rng);
        fill_zero(w.in_b[k], 1, d);
        fill_zero(w.out_w[k], d, pd);
        fill_zero(w.out_b[k], 1, pd);
    }
    fill_normal(w.emb_style, c.styles, d, 0.5, rng);
    fill_normal(w.emb_script, c.scripts, d, 0.5, rng);
    fill_normal(w.emb_source, 2, d, 0.5, rng);
    fill_normal(w.emb_polarity, 2, d, 0.5, rng);
    fill_zero(w.emod_c, c.heads, c.head_dim() / 2);
    fill_zero(w.emod_m, c.heads, c.head_dim() / 2);
    w.blocks.resize(static_cast<std::size_t>(c.blocks));
    for (auto& b : w.blocks) {
        fill_normal(b.mod_w1, d, d, 1.0 / std::sqrt(d), rng);
        fill_zero(b.mod_b1, 1, d);
        fill_zero(b.mod_w2, d, 6 * d);
        fill_zero(b.mod_b2, 1, 6 * d);
        fill_normal(b.qkv_w, d, 3 * d, 1.0 / std::sqrt(d), rng);
        fill_zero(b.qkv_b, 1, 3 * d);
        fill_normal(b.attn_w, d, d, 1.0 / std::sqrt(d), rng);
        fill_zero(b.attn_b, 1, d);
        fill_normal(b.mlp_w1, d, hidden, 1.0 / std::sqrt(d), rng);
        fill_zero(b.mlp_b1, 1, hidden);
        fill_normal(b.mlp_w2, hidden, d, 1.0 / std::sqrt(hidden), rng);
        fill_zero(b.mlp_b2, 1, d);
    }
    fill_zero(w.final_w, d, 2 * d);
    fill_zero(w.final_b, 1, 2 * d);
    return w;
}

template <typename T>
DuplexDiT<T>::DuplexDiT(const ModelConfig& config, std::uint64_t seed)
    : config_(config), weights_(init_weights<T>(config, seed)) {}

template <typename T>
DuplexDiT<T>::DuplexDiT(const ModelConfig& config, Weights<T> weights) : config_(config), weights_(std::move(weights)) {
    config_.validate();
    Weights<T> expected = init_weights<T>(config_, 0);
    std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> shapes;
    expected.for_each([&](const std::string& name, const Matrix<T>& m) { shapes.push_back({name, {m.rows(), m.cols()}}); });
    std::size_t i = 0;
    weights_.for_each([&](const std::string& name, const Matrix<T>& m) {
        if (i >= shapes.size() || shapes[i].first != name || shapes[i].second.first != m.rows() ||
            shapes[i].second.second != m.cols()) {
            throw Error("model weights: parameter '" + name + "' does not match the configuration");
        }
        ++i;
    });
    if (i != shapes.size()) throw Error("model weights: parameter count does not match the configuration");
}

template <typename T>
Matrix<T> DuplexDiT<T>::tokenize(const Latent& z, Modality modality) const {
    if (z.channels != config_.latent_channels || z.height != config_.latent_height || z.width != config_.latent_width) {
        throw Error(std::string("tokenize: ") + to_string(modality) + " latent shape does not match the model");
    }
    auto k = idx(modality);
    return (patchify<T>(z, config_.token_patch) * weights_.in_w[k]).rowwise() + weights_.in_b[k].row(0);
}

template <typename T>
Matrix<T> DuplexDiT<T>::condition_embedding(double t, const ConditionVector& cond) const {
    if (cond.style_id < 0 || cond.style_id >= config_.styles || cond.script_id < 0 || cond.script_id >= config_.scripts) {
        throw Error("condition ids outside the model's embedding tables");
    }
    Matrix<T> e = timestep_embedding<T>(t, config_.d_model);
    e += weights_.emb_style.row(cond.style_id);
    e += weights_.emb_script.row(cond.script_id);
    e += weights_.emb_source.row(cond.source == Source::real ? 0 : 1);
    e += weights_.emb_polarity.row(cond.polarity == Polarity::light_on_dark ? 0 : 1);
    return e;
}

template <typename T>
ModulationVectors<T> DuplexDiT<T>::modulate(int block, double t, const ConditionVector& cond) const {
    if (!(t >= 0.0 && t <= 1.0)) throw Error("modulate: t outside [0, 1]");
    const auto& bw = weights_.blocks.at(static_cast<std::size_t>(block));
    const int d = config_.d_model;
    Matrix<T> h = ((condition_embedding(t, cond) * bw.mod_w1) + bw.mod_b1).unaryExpr([](T v) { return silu(v); });
    Matrix<T> mod = h * bw.mod_w2 + bw.mod_b2;
    ModulationVectors<T> out;
    out.shift_attn = mod.middleCols(0, d);
    out.scale_attn = (mod.middleCols(d, d).array() + T(1)).matrix();
    out.gate_attn = mod.middleCols(2 * d, d);
    out.shift_mlp = mod.middleCols(3 * d, d);
    out.scale_mlp = (mod.middleCols(4 * d, d).array() + T(1)).matrix();
    out.gate_mlp = mod.middleCols(5 * d, d);
    return out;
}

template <typename T>
Prediction<T> DuplexDiT<T>::forward(const ModelInput& in, ForwardCache<T>* cache) const {
    const ModelConfig& c = config_;
    const Eigen::Index n = c.tokens_per_modality();
    const int d = c.d_model;
    const int heads = c.heads;
    const int hd = c.head_dim();
    const T attn_scale = T(1) / std::sqrt(static_cast<T>(hd));

    std::vector<Modality> segments = {Modality::content, Modality::image};
    if (in.include_box) segments.push_back(Modality::box);
    const auto seg_count = static_cast<Eigen::Index>(segments.size());
    const Eigen::Index len = seg_count * n;

    auto latent_of = [&](Modality m) -> const Latent& {
        const Latent* z = m == Modality::content ? in.content : m == Modality::image ? in.image : in.box;
        if (z == nullptr) throw Error(std::string("forward: missing ") + to_string(m) + " latent");
        for (float v : z->data) {
            if (!std::isfinite(v)) throw Error(std::string("forward: non-finite value in ") + to_string(m) + " latent");
        }
        return *z;
    };
    if (!(in.t_c >= 0.0 && in.t_c <= 1.0 && in.t_i >= 0.0 && in.t_i <= 1.0)) {
        throw Error("forward: timesteps must lie in [0, 1]");
    }

    ForwardCache<T> local;
    ForwardCache<T>& fc = cache ? *cache : local;
    fc.valid = false;
    fc.segments = segments;
    fc.cond = in.cond;
    fc.patches.assign(segments.size(), {});
    fc.angles.assign(segments.size(), {});
    fc.blocks.assign(static_cast<std::size_t>(c.blocks), {});

    Matrix<T> x(len, d);
    for (std::size_t s = 0; s < segments.size(); ++s) {
        const Latent& z = latent_of(segments[s]);
        if (z.channels != c.latent_channels || z.height != c.latent_height || z.width != c.latent_width) {
            throw Error(std::string("forward: ") + to_string(segments[s]) + " latent shape does not match the model");
        }
        fc.patches[s] = patchify<T>(z, c.token_patch);
        auto k = idx(segments[s]);
        x.middleRows(static_cast<Eigen::Index>(s) * n, n) =
            (fc.patches[s] * weights_.in_w[k]).rowwise() + weights_.in_b[k].row(0);
    }

    auto dup = duplicate_rope<T>(compute_rope(grid(), hd, c.rope_base), weights_.emod_c, weights_.emod_m);
    std::vector<Matrix<T>> cos_a(segments.size()), sin_a(segments.size());
    for (std::size_t s = 0; s < segments.size(); ++s) {
        fc.angles[s] = dup[idx(segments[s])];
        cos_a[s] = fc.angles[s].array().cos().matrix().template cast<T>();
        sin_a[s] = fc.angles[s].array().sin().matrix().template cast<T>();
    }

    fc.embed = {condition_embedding(in.t_c, in.cond), condition_embedding(in.t_i, in.cond)};

    for (int b = 0; b < c.blocks; ++b) {
        const auto& bw = weights_.blocks[static_cast<std::size_t>(b)];
        auto& bc = fc.blocks[static_cast<std::size_t>(b)];
        for (std::size_t g = 0; g < 2; ++g) {
            bc.mod_hpre[g] = fc.embed[g] * bw.mod_w1 + bw.mod_b1;
            bc.mod_h[g] = bc.mod_hpre[g].unaryExpr([](T v) { return silu(v); });
            bc.mod[g] = bc.mod_h[g] * bw.mod_w2 + bw.mod_b2;
        }

        bc.x_in = x;
        layer_norm(x, bc.xhat1, bc.rstd1);
        bc.xm1 = modulate_rows(bc.xhat1, segments, n, bc.mod, 0, 1, d);
        Matrix<T> qkv = (bc.xm1 * bw.qkv_w).rowwise() + bw.qkv_b.row(0);
        bc.q = qkv.leftCols(d);
        bc.k = qkv.middleCols(d, d);
        bc.v = qkv.rightCols(d);
        for (std::size_t s = 0; s < segments.size(); ++s) {
            rotate_rows(bc.q, static_cast<Eigen::Index>(s) * n, cos_a[s], sin_a[s], heads, false);
            rotate_rows(bc.k, static_cast<Eigen::Index>(s) * n, cos_a[s], sin_a[s], heads, false);
        }
        bc.attn_cat.resize(len, d);
        bc.probs.assign(static_cast<std::size_t>(heads), {});
        for (int h = 0; h < heads; ++h) {
            Matrix<T>& p = bc.probs[static_cast<std::size_t>(h)];
            p.noalias() = bc.q.middleCols(h * hd, hd) * bc.k.middleCols(h * hd, hd).transpose();
            p *= attn_scale;
            for (Eigen::Index r = 0; r < len; ++r) {
                T mx = p.row(r).maxCoeff();
                p.row(r) = (p.row(r).array() - mx).exp();
                p.row(r) /= p.row(r).sum();
            }
            bc.attn_cat.middleCols(h * hd, hd).noalias() = p * bc.v.middleCols(h * hd, hd);
        }
        bc.attn_out = (bc.attn_cat * bw.attn_w).rowwise() + bw.attn_b.row(0);
        gated_residual(x, bc.attn_out, segments, n, bc.mod, 2, d);

        layer_norm(x, bc.xhat2, bc.rstd2);
        bc.xm2 = modulate_rows(bc.xhat2, segments, n, bc.mod, 3, 4, d);
        bc.h_pre = (bc.xm2 * bw.mlp_w1).rowwise() + bw.mlp_b1.row(0);
        bc.h_act = bc.h_pre.unaryExpr([](T v) { return gelu(v); });
        bc.mlp_out = (bc.h_act * bw.mlp_w2).rowwise() + bw.mlp_b2.row(0);
        gated_residual(x, bc.mlp_out, segments, n, bc.mod, 5, d);
        if (!cache) bc = {};
    }

    for (std::size_t g = 0; g < 2; ++g) {
        fc.final_h[g] = fc.embed[g].unaryExpr([](T v) { return silu(v); });
        fc.final_mod[g] = fc.final_h[g] * weights_.final_w + weights_.final_b;
    }
    layer_norm(x, fc.xhat_f, fc.rstd_f);
    fc.xm_f = modulate_rows(fc.xhat_f, segments, n, fc.final_mod, 0, 1, d);

    Prediction<T> pred;
    for (auto m : kModalities) pred.patches[idx(m)] = Matrix<T>::Zero(n, c.patch_dim());
    for (std::size_t s = 0; s < segments.size(); ++s) {
        auto k = idx(segments[s]);
        pred.patches[k] = (fc.xm_f.middleRows(static_cast<Eigen::Index>(s) * n, n) * weights_.out_w[k]).rowwise() +
                          weights_.out_b[k].row(0);
    }
    fc.valid = cache != nullptr;
    return pred;
}

template <typename T>
std::vector<Prediction<T>> DuplexDiT<T>::forward_batch(const std::vector<ModelInput>& inputs) const {
    std::vector<Prediction<T>> out;
    out.reserve(inputs.size());
    for (const auto& in : inputs) out.push_back(forward(in));
    return out;
}

template <typename T>
void DuplexDiT<T>::backward(const ForwardCache<T>& fc, const Prediction<T>& d_out, Weights<T>& grads) const {
    if (!fc.valid) {
        throw Error("backward called without a recorded forward pass");
    }
    const ModelConfig& c = config_;
    const Eigen::Index n = c.tokens_per_modality();
    const int d = c.d_model;
    const int heads = c.heads;
    const int hd = c.head_dim();
    const int pairs = hd / 2;
    const T attn_scale = T(1) / std::sqrt(static_cast<T>(hd));
    const auto& segments = fc.segments;
    const Eigen::Index len = static_cast<Eigen::Index>(segments.size()) * n;

    std::array<Matrix<T>, 2> d_embed = {Matrix<T>::Zero(1, d), Matrix<T>::Zero(1, d)};

    // Output projections and final modulated norm.
    Matrix<T> dxm_f(len, d);
    for (std::size_t s = 0; s < segments.size(); ++s) {
        auto k = idx(segments[s]);
        const Matrix<T>& dy = d_out.patches[k];
        if (dy.rows() != n || dy.cols() != c.patch_dim()) throw Error("backward: gradient shape mismatch");
        auto rows = static_cast<Eigen::Index>(s) * n;
        grads.out_w[k].noalias() += fc.xm_f.middleRows(rows, n).transpose() * dy;
        grads.out_b[k] += dy.colwise().sum();
        dxm_f.middleRows(rows, n).noalias() = dy * weights_.out_w[k].transpose();
    }
    std::array<Matrix<T>, 2> d_final_mod = {Matrix<T>::Zero(1, 2 * d), Matrix<T>::Zero(1, 2 * d)};
    Matrix<T> dxhat = modulate_rows_backward(dxm_f, fc.xhat_f, segments, n, fc.final_mod, d_final_mod, 0, 1, d);
    Matrix<T> dx = layer_norm_backward(dxhat, fc.xhat_f, fc.rstd_f);
    for (std::size_t g = 0; g < 2; ++g) {
        grads.final_w.noalias() += fc.final_h[g].transpose() * d_final_mod[g];
        grads.final_b += d_final_mod[g];
        Matrix<T> dh = d_final_mod[g] * weights_.final_w.transpose();
        d_embed[g].array() += dh.array() * fc.embed[g].unaryExpr([](T v) { return silu_grad(v); }).array();
    }

    std::vector<Matrix<T>> cos_a(segments.size()), sin_a(segments.size());
    for (std::size_t s = 0; s < segments.size(); ++s) {
        cos_a[s] = fc.angles[s].array().cos().matrix().template cast<T>();
        sin_a[s] = fc.angles[s].array().sin().matrix().template cast<T>();
    }

    for (int b = c.blocks - 1; b >= 0; --b) {
        const auto& bw = weights_.blocks[static_cast<std::size_t>(b)];
        auto& bg = grads.blocks[static_cast<std::size_t>(b)];
        const auto& bc = fc.blocks[static_cast<std::size_t>(b)];
        std::array<Matrix<T>, 2> dmod = {Matrix<T>::Zero(1, 6 * d), Matrix<T>::Zero(1, 6 * d)};

        // MLP branch.
        Matrix<T> dmlp;
        gated_residual_backward(dx, bc.mlp_out, segments, n, bc.mod, dmod, 5, d, dmlp);
        bg.mlp_w2.noalias() += bc.h_act.transpose() * dmlp;
        bg.mlp_b2 += dmlp.colwise().sum();
        Matrix<T> dh = dmlp * bw.mlp_w2.transpose();
        dh.array() *= bc.h_pre.unaryExpr([](T v) { return gelu_grad(v); }).array();
        bg.mlp_w1.noalias() += bc.xm2.transpose() * dh;
        bg.mlp_b1 += dh.colwise().sum();
        Matrix<T> dxm2 = dh * bw.mlp_w1.transpose();
        Matrix<T> dxhat2 = modulate_rows_backward(dxm2, bc.xhat2, segments, n, bc.mod, dmod, 3, 4, d);
        dx += layer_norm_backward(dxhat2, bc.xhat2, bc.rstd2);

        // Attention branch.
        Matrix<T> dattn;
        gated_residual_backward(dx, bc.attn_out, segments, n, bc.mod, dmod, 2, d, dattn);
        bg.attn_w.noalias() += bc.attn_cat.transpose() * dattn;
        bg.attn_b += dattn.colwise().sum();
        Matrix<T> dcat = dattn * bw.attn_w.transpose();

        Matrix<T> dq(len, d), dk(len, d), dv(len, d);
        for (int h = 0; h < heads; ++h) {
            const Matrix<T>& p = bc.probs[static_cast<std::size_t>(h)];
            auto d_o = dcat.middleCols(h * hd, hd);
            dv.middleCols(h * hd, hd).noalias() = p.transpose() * d_o;
            Matrix<T> dp = d_o * bc.v.middleCols(h * hd, hd).transpose();
            Eigen::Matrix<T, Eigen::Dynamic, 1> row_dot = (dp.array() * p.array()).rowwise().sum();
            Matrix<T> ds = (p.array() * (dp.array().colwise() - row_dot.array())).matrix();
            ds *= attn_scale;
            dq.middleCols(h * hd, hd).noalias() = ds * bc.k.middleCols(h * hd, hd);
            dk.middleCols(h * hd, hd).noalias() = ds.transpose() * bc.q.middleCols(h * hd, hd);
        }

        // Rotary: angle gradients for the offset embeddings, then un-rotate.
        for (std::size_t s = 0; s < segments.size(); ++s) {
            Matrix<T>* demod = segments[s] == Modality::content ? &grads.emod_c
                               : segments[s] == Modality::box  ? &grads.emod_m
                                                               : nullptr;
            auto rows = static_cast<Eigen::Index>(s) * n;
            if (demod) {
                for (Eigen::Index r = 0; r < n; ++r) {
                    for (int h = 0; h < heads; ++h) {
                        for (int pi = 0; pi < pairs; ++pi) {
                            int a = h * hd + 2 * pi;
                            T g = dq(rows + r, a) * -bc.q(rows + r, a + 1) + dq(rows + r, a + 1) * bc.q(rows + r, a) +
                                  dk(rows + r, a) * -bc.k(rows + r, a + 1) + dk(rows + r, a + 1) * bc.k(rows + r, a);
                            (*demod)(h, pi) += g;
                        }
                    }
                }
            }
            rotate_rows(dq, rows, cos_a[s], sin_a[s], heads, true);
            rotate_rows(dk, rows, cos_a[s], sin_a[s], heads, true);
        }

        Matrix<T> dqkv(len, 3 * d);
        dqkv.leftCols(d) = dq;
        dqkv.middleCols(d, d) = dk;
        dqkv.rightCols(d) = dv;
        bg.qkv_w.noalias() += bc.xm1.transpose() * dqkv;
        bg.qkv_b += dqkv.colwise().sum();
        Matrix<T> dxm1 = dqkv * bw.qkv_w.transpose();
        Matrix<T> dxhat1 = modulate_rows_backward(dxm1, bc.xhat1, segments, n, bc.mod, dmod, 0, 1, d);
        dx += layer_norm_backward(dxhat1, bc.xhat1, bc.rstd1);

        // Modulation MLP.
        for (std::size_t g = 0; g < 2; ++g) {
            bg.mod_w2.noalias() += bc.mod_h[g].transpose() * dmod[g];
            bg.mod_b2 += dmod[g];
            Matrix<T> dhm = dmod[g] * bw.mod_w2.transpose();
            dhm.array() *= bc.mod_hpre[g].unaryExpr([](T v) { return silu_grad(v); }).array();
            bg.mod_w1.noalias() += fc.embed[g].transpose() * dhm;
            bg.mod_b1 += dhm;
            d_embed[g].noalias() += dhm * bw.mod_w1.transpose();
        }
    }

    for (std::size_t s = 0; s < segments.size(); ++s) {
        auto k = idx(segments[s]);
        auto dxs = dx.middleRows(static_cast<Eigen::Index>(s) * n, n);
        grads.in_w[k].noalias() += fc.patches[s].transpose() * dxs;
        grads.in_b[k] += dxs.colwise().sum();
    }

    Matrix<T> de = d_embed[0] + d_embed[1];
    grads.emb_style.row(fc.cond.style_id) += de;
    grads.emb_script.row(fc.cond.script_id) += de;
    grads.emb_source.row(fc.cond.source == Source::real ? 0 : 1) += de;
    grads.emb_polarity.row(fc.cond.polarity == Polarity::light_on_dark ? 0 : 1) += de;
}

template <typename T>
Latent DuplexDiT<T>::to_latent(const Matrix<T>& patches) const {
    return unpatchify<T>(patches, config_.latent_channels, config_.latent_height, config_.latent_width,
                         config_.token_patch);
}

template Matrix<float> patchify<float>(const Latent&, int);
template Matrix<double> patchify<double>(const Latent&, int);
template Latent unpatchify<float>(const Matrix<float>&, int, int, int, int);
template Latent unpatchify<double>(const Matrix<double>&, int, int, int, int);
template std::array<Matrix<double>, 3> duplicate_rope<float>(const Matrix<double>&, const Matrix<float>&,
                                                             const Matrix<float>&);
template std::array<Matrix<double>, 3> duplicate_rope<double>(const Matrix<double>&, const Matrix<double>&,
                                                              const Matrix<double>&);
template void apply_rotary<float>(Matrix<float>&, const Matrix<double>&, int);
template void apply_rotary<double>(Matrix<double>&, const Matrix<double>&, int);
template Weights<float> init_weights<float>(const ModelConfig&, std::uint64_t);
template Weights<double> init_weights<double>(const ModelConfig&, std::uint64_t);
template class DuplexDiT<float>;
template class DuplexDiT<double>;

} // namespace unicalli
