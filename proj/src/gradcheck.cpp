#include "unicalli/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "unicalli/rng.hpp"

namespace unicalli {

ModelConfig gradcheck_config() {
    ModelConfig c;
    c.latent_height = 4;
    c.latent_width = 10;
    c.d_model = 16;
    c.heads = 1;
    c.blocks = 1;
    return c;
}

namespace {

Latent random_latent(const ModelConfig& c, Rng& rng) {
    Latent z(c.latent_channels, c.latent_height, c.latent_width);
    for (auto& v : z.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return z;
}

struct Problem {
    Latent content, image, box;
    std::array<Matrix<double>, 3> targets;
    ModelInput input;
};

double loss_of(const DuplexDiT<double>& model, const Problem& p, Prediction<double>* d_out,
               ForwardCache<double>* cache) {
    Prediction<double> pred = model.forward(p.input, cache);
    double loss = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
        Matrix<double> diff = pred.patches[k] - p.targets[k];
        auto n = static_cast<double>(diff.size());
        loss += diff.squaredNorm() / n;
        if (d_out) d_out->patches[k] = diff * (2.0 / n);
    }
    return loss;
}

} // namespace

GradCheckReport run_gradcheck(const GradCheckOptions& options) {
    const ModelConfig& c = options.config;
    Rng rng = Rng::derive(options.seed, Stream::init, 0x6c);
    Weights<double> w = init_weights<double>(c, options.seed);
    w.for_each([&](const std::string&, Matrix<double>& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = options.param_scale * rng.normal();
    });
    DuplexDiT<double> model(c, std::move(w));

    Problem p;
    p.content = random_latent(c, rng);
    p.image = random_latent(c, rng);
    p.box = random_latent(c, rng);
    const int n = c.tokens_per_modality();
    for (auto& t : p.targets) {
        t.resize(n, c.patch_dim());
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
    }
    p.input.content = &p.content;
    p.input.image = &p.image;
    p.input.box = &p.box;
    p.input.t_c = 0.3;
    p.input.t_i = 0.7;
    p.input.cond = {Source::real, Polarity::dark_on_light, c.styles - 1, c.scripts / 2};
    p.input.include_box = options.include_box;

    ForwardCache<double> cache;
    Prediction<double> d_out;
    loss_of(model, p, &d_out, &cache);
    Weights<double> grads = model.weights().zeros_like();
    model.backward(cache, d_out, grads);

    std::vector<Matrix<double>*> analytic;
    grads.for_each([&](const std::string&, Matrix<double>& m) { analytic.push_back(&m); });

    GradCheckReport report;
    std::size_t index = 0;
    model.weights().for_each([&](const std::string& name, Matrix<double>& m) {
        const Matrix<double>& g = *analytic[index++];
        ParamCheck pc;
        pc.name = name;
        pc.count = static_cast<std::size_t>(m.size());
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            double saved = m.data()[i];
            m.data()[i] = saved + options.step;
            double up = loss_of(model, p, nullptr, nullptr);
            m.data()[i] = saved - options.step;
            double down = loss_of(model, p, nullptr, nullptr);
            m.data()[i] = saved;
            double numeric = (up - down) / (2.0 * options.step);
            double a = g.data()[i];
            double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), options.floor});
            pc.max_rel_error = std::max(pc.max_rel_error, rel);
            pc.max_abs_grad = std::max(pc.max_abs_grad, std::abs(a));
        }
        if (pc.max_rel_error >= report.max_rel_error) {
            report.max_rel_error = pc.max_rel_error;
            report.worst = name;
        }
        report.params.push_back(pc);
    });
    return report;
}

} // namespace unicalli
