#include "unicalli/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "unicalli/error.hpp"
#include "unicalli/pipeline.hpp"

namespace unicalli {

void TrainConfig::validate() const {
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0)) throw Error(std::string("train config: ") + name + " must lie in [0, 1]");
    };
    prob(p_gen, "p_gen");
    prob(p_drop, "p_drop");
    prob(p_syn, "p_syn");
    prob(ligature_rate, "ligature_rate");
    if (total_steps < 1) throw Error("train config: steps must be >= 1");
    if (batch_size < 1) throw Error("train config: batch_size must be >= 1");
    if (!(lambda >= 0.0)) throw Error("train config: lambda must be >= 0");
    if (!(lr > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
        throw Error("train config: invalid optimizer hyperparameters");
    }
    if (checkpoint_interval < 1 || log_interval < 1) throw Error("train config: intervals must be >= 1");
    model.validate();
}

std::string TrainMetrics::csv_header() {
    return "step,mode,l_cond,l_img,l_box,l_total,grad_norm,dropped,eligible,unlabeled,batch,wall_time";
}

std::string TrainMetrics::csv_row() const {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%lld,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d,%d,%d", static_cast<long long>(step),
                  to_string(mode), l_cond, l_img, l_box, l_total, grad_norm, dropped, eligible, unlabeled, batch);
    return buf;
}

Adam::Adam(const Weights<float>& like, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(like.zeros_like()), v_(like.zeros_like()) {}

void Adam::update(Weights<float>& weights, const Weights<float>& grads, std::int64_t t) {
    std::vector<const Matrix<float>*> gs;
    std::vector<Matrix<float>*> ms, vs;
    grads.for_each([&](const std::string&, const Matrix<float>& g) { gs.push_back(&g); });
    m_.for_each([&](const std::string&, Matrix<float>& m) { ms.push_back(&m); });
    v_.for_each([&](const std::string&, Matrix<float>& v) { vs.push_back(&v); });
    const auto b1 = static_cast<float>(beta1_);
    const auto b2 = static_cast<float>(beta2_);
    const auto c1 = static_cast<float>(1.0 - std::pow(beta1_, static_cast<double>(t)));
    const auto c2 = static_cast<float>(1.0 - std::pow(beta2_, static_cast<double>(t)));
    const auto lr = static_cast<float>(lr_);
    const auto eps = static_cast<float>(eps_);
    std::size_t k = 0;
    weights.for_each([&](const std::string&, Matrix<float>& w) {
        auto g = gs[k]->array();
        auto m = ms[k]->array();
        auto v = vs[k]->array();
        m = b1 * m + (1.0f - b1) * g;
        v = b2 * v + (1.0f - b2) * g.square();
        w.array() -= lr * (m / c1) / ((v / c2).sqrt() + eps);
        ++k;
    });
}

Mode draw_mode(const TrainConfig& cfg, std::int64_t step) {
    Rng rng = Rng::derive(cfg.seed, Stream::mode, static_cast<std::uint64_t>(step));
    return rng.bernoulli(cfg.p_gen) ? Mode::generation : Mode::recognition;
}

TrainMetrics train_step(DuplexDiT<float>& model, Adam& adam, const std::vector<Sample>& batch, std::int64_t step,
                        const TrainConfig& cfg, const Codec& codec) {
    if (batch.empty()) throw Error("train_step: empty batch");
    TrainMetrics met;
    met.step = step;
    met.batch = static_cast<int>(batch.size());
    met.mode = draw_mode(cfg, step);
    int labeled = 0;
    for (const auto& s : batch) labeled += s.labeled ? 1 : 0;
    met.unlabeled = met.batch - labeled;
    if (met.unlabeled > 0) met.mode = Mode::generation;

    const bool gen = met.mode == Mode::generation;
    const double w_img = gen ? 1.0 : cfg.lambda;
    const double w_cond = gen ? cfg.lambda : 1.0;
    const auto B = static_cast<double>(batch.size());

    Weights<float> grads = model.weights().zeros_like();
    ForwardCache<float> cache;
    double sum_cond = 0.0, sum_img = 0.0, sum_box = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j) {
        const Sample& s = batch[j];
        Rng t_rng = Rng::derive(cfg.seed, Stream::timestep, static_cast<std::uint64_t>(step), j);
        Rng n_rng = Rng::derive(cfg.seed, Stream::noise, static_cast<std::uint64_t>(step), j);
        TimestepPair t = assign_timesteps(met.mode, s.labeled, cfg.p_drop, t_rng);
        if (gen && s.labeled) {
            ++met.eligible;
            met.dropped += t.t_c == 1.0 ? 1 : 0;
        }
        Latent z_c = codec.encode(s.content);
        Latent z_i = codec.encode(s.strip);
        Latent z_m = codec.encode(s.box_map);
        NoisedTriple nt = noise_triple(z_c, z_i, z_m, t, n_rng);
        std::array<Latent, 3> targets = {velocity_target(z_c, nt.eps_content), velocity_target(z_i, nt.eps_image),
                                         velocity_target(z_m, nt.eps_box)};

        ModelInput in{&nt.content, &nt.image, &nt.box, t.t_c, t.t_i, s.cond};
        Prediction<float> pred = model.forward(in, &cache);
        Prediction<float> d_out;
        std::array<double, 3> weight = {s.labeled ? w_cond / labeled : 0.0, w_img / B, w_img / B};
        std::array<double*, 3> sums = {&sum_cond, &sum_img, &sum_box};
        for (std::size_t k = 0; k < 3; ++k) {
            Matrix<float> target = patchify<float>(targets[k], model.config().token_patch);
            Matrix<float> diff = pred.patches[k] - target;
            const auto n = static_cast<double>(diff.size());
            double mse = diff.template cast<double>().squaredNorm() / n;
            if (k != 0 || s.labeled) *sums[k] += mse;
            d_out.patches[k] = diff * static_cast<float>(2.0 * weight[k] / n);
        }
        model.backward(cache, d_out, grads);
    }
    met.l_cond = labeled > 0 ? sum_cond / labeled : 0.0;
    met.l_img = sum_img / B;
    met.l_box = sum_box / B;
    met.l_total = composite_loss(met.mode, met.l_cond, met.l_img, met.l_box, cfg.lambda);

    double sq = 0.0;
    grads.for_each([&](const std::string&, const Matrix<float>& g) { sq += g.template cast<double>().squaredNorm(); });
    met.grad_norm = std::sqrt(sq);
    if (!std::isfinite(met.l_total) || !std::isfinite(met.grad_norm)) {
        throw Error("non-finite loss at step " + std::to_string(step));
    }
    adam.update(model.weights(), grads, step);
    return met;
}

std::string checkpoint_name(std::int64_t step) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "ckpt_%08lld.ucal", static_cast<long long>(step));
    return buf;
}

Checkpoint make_checkpoint(const DuplexDiT<float>& model, const Adam& adam, std::int64_t step, std::uint64_t seed) {
    Checkpoint c;
    c.config = model.config();
    c.weights = model.weights();
    c.has_optimizer = true;
    c.adam_m = adam.m();
    c.adam_v = adam.v();
    c.step = step;
    c.seed = seed;
    return c;
}

FitResult fit(const TrainConfig& cfg, const LoadedManifest& data, const FitOptions& options) {
    cfg.validate();
    auto log = [&](const std::string& msg) {
        if (options.log) options.log(msg);
    };
    const auto start = std::chrono::steady_clock::now();

    Alphabet alphabet(cfg.model.alphabet);
    SynthOptions synth;
    synth.conditions = {cfg.model.styles, cfg.model.scripts};
    synth.ligature_rate = cfg.ligature_rate;
    SampleMixer::Generator generator;
    if (cfg.p_syn > 0.0 || (data.labeled.empty() && data.unlabeled.empty())) {
        generator = [&alphabet, synth](Rng& rng) { return synthesize_sample(alphabet, synth, rng); };
    }
    SampleMixer mixer(data.labeled, data.unlabeled, generator, cfg.p_syn);

    std::int64_t step = 0;
    std::optional<DuplexDiT<float>> model;
    std::optional<Adam> adam;
    if (options.resume) {
        Checkpoint ck = load_checkpoint(*options.resume);
        if (!(ck.config == cfg.model)) throw Error("resume: checkpoint model config differs from the train config");
        if (ck.seed != cfg.seed) throw Error("resume: checkpoint seed differs from the train config");
        if (!ck.has_optimizer) throw Error("resume: checkpoint has no optimizer state");
        model.emplace(ck.config, std::move(ck.weights));
        adam.emplace(model->weights(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
        adam->m() = std::move(ck.adam_m);
        adam->v() = std::move(ck.adam_v);
        step = ck.step;
        log("resumed from " + options.resume->string() + " at step " + std::to_string(step));
    } else {
        model.emplace(cfg.model, cfg.seed);
        adam.emplace(model->weights(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    }

    FitResult result;
    std::filesystem::create_directories(options.out_dir);
    result.metrics_path = options.out_dir / kMetricsLog;
    const bool fresh_log = !std::filesystem::exists(result.metrics_path) ||
                           std::filesystem::file_size(result.metrics_path) == 0;
    std::ofstream metrics(result.metrics_path, std::ios::app);
    if (!metrics) throw Error("cannot open " + result.metrics_path.string());
    if (fresh_log) metrics << TrainMetrics::csv_header() << '\n';

    const Codec codec;
    std::vector<Sample> batch;
    while (step < cfg.total_steps) {
        ++step;
        batch.clear();
        for (int j = 0; j < cfg.batch_size; ++j) {
            Rng rng = Rng::derive(cfg.seed, Stream::mix, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(j));
            batch.push_back(mixer.draw(rng));
        }
        TrainMetrics met = train_step(*model, *adam, batch, step, cfg, codec);
        met.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (options.on_step) options.on_step(met);
        if (step % cfg.log_interval == 0 || step == cfg.total_steps) {
            char wall[32];
            std::snprintf(wall, sizeof wall, "%.3f", met.wall_time);
            metrics << met.csv_row() << ',' << wall << '\n';
            metrics.flush();
            if (!metrics) throw Error("write failed: " + result.metrics_path.string());
        }
        if (step % cfg.checkpoint_interval == 0) {
            auto path = options.out_dir / checkpoint_name(step);
            save_checkpoint(path, make_checkpoint(*model, *adam, step, cfg.seed));
            result.checkpoints.push_back(path);
            log("step " + std::to_string(step) + " loss " + std::to_string(met.l_total) + " -> " + path.string());
        }
    }
    auto final_path = options.out_dir / kFinalCheckpoint;
    save_checkpoint(final_path, make_checkpoint(*model, *adam, step, cfg.seed));
    result.checkpoints.push_back(final_path);
    result.final_step = step;
    return result;
}

FitResult fit(const TrainConfig& cfg, const std::vector<std::filesystem::path>& manifests, const FitOptions& options) {
    Alphabet alphabet(cfg.model.alphabet);
    LoadedManifest all;
    for (const auto& path : manifests) {
        LoadedManifest part = load_manifest(path, alphabet, {}, {cfg.model.styles, cfg.model.scripts});
        std::move(part.labeled.begin(), part.labeled.end(), std::back_inserter(all.labeled));
        std::move(part.unlabeled.begin(), part.unlabeled.end(), std::back_inserter(all.unlabeled));
    }
    if (options.log) {
        options.log("loaded " + std::to_string(all.labeled.size()) + " labeled and " +
                    std::to_string(all.unlabeled.size()) + " unlabeled samples");
    }
    return fit(cfg, all, options);
}

} // namespace unicalli
