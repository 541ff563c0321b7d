#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "unicalli/error.hpp"
#include "unicalli/trainer.hpp"

using namespace unicalli;
namespace fs = std::filesystem;

namespace {

TrainConfig small_config(std::uint64_t seed) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.batch_size = 2;
    cfg.model.d_model = 32;
    cfg.model.heads = 2;
    cfg.model.blocks = 1;
    cfg.model.alphabet = 16;
    return cfg;
}

std::vector<Sample> labeled_samples(int n) {
    Alphabet alphabet(16);
    SynthOptions opt;
    std::vector<Sample> out;
    for (int k = 0; k < n; ++k) {
        Rng rng = Rng::derive(5, Stream::synth, static_cast<std::uint64_t>(k));
        out.push_back(synthesize_sample(alphabet, opt, rng));
    }
    return out;
}

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("unicalli_trainer_" + name);
    fs::remove_all(dir);
    return dir;
}

std::vector<std::string> run(const TrainConfig& cfg, const LoadedManifest& data, const fs::path& dir,
                             std::optional<fs::path> resume = std::nullopt) {
    std::vector<std::string> rows;
    FitOptions fo;
    fo.out_dir = dir;
    fo.resume = resume;
    fo.on_step = [&](const TrainMetrics& m) { rows.push_back(m.csv_row()); };
    fit(cfg, data, fo);
    return rows;
}

std::vector<float> flatten(const Weights<float>& w) {
    std::vector<float> out;
    w.for_each([&](const std::string&, const Matrix<float>& m) { out.insert(out.end(), m.data(), m.data() + m.size()); });
    return out;
}

} // namespace

TEST_SUITE("trainer") {

TEST_CASE("mode draws") {
    TrainConfig cfg = small_config(1);
    cfg.p_gen = 1.0;
    for (int s = 1; s <= 200; ++s) CHECK(draw_mode(cfg, s) == Mode::generation);
    cfg.p_gen = 0.0;
    for (int s = 1; s <= 200; ++s) CHECK(draw_mode(cfg, s) == Mode::recognition);
    cfg.p_gen = 0.5;
    int gen = 0;
    for (int s = 1; s <= 4000; ++s) gen += draw_mode(cfg, s) == Mode::generation;
    CHECK(std::abs(gen / 4000.0 - 0.5) < 0.03);
}

TEST_CASE("config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.p_drop = 1.5;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.total_steps = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.lambda = -0.1;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("adam matches the closed form on the first update") {
    ModelConfig c = small_config(0).model;
    Weights<float> w = init_weights<float>(c, 3);
    Weights<float> g = w.zeros_like();
    Rng rng(4);
    g.for_each([&](const std::string&, Matrix<float>& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal());
    });
    Weights<float> before = w;
    Adam adam(w, 1e-3, 0.9, 0.99, 1e-8);
    adam.update(w, g, 1);
    auto a = flatten(before), b = flatten(w), gs = flatten(g);
    for (std::size_t i = 0; i < a.size(); i += 97) {
        // Bias-corrected first step: m_hat = g, v_hat = g^2.
        double expect = a[i] - 1e-3 * gs[i] / (std::abs(gs[i]) + 1e-8);
        CHECK(b[i] == doctest::Approx(expect).epsilon(1e-5));
    }
}

TEST_CASE("logged total is the composite of the logged parts") {
    TrainConfig cfg = small_config(2);
    auto batch = labeled_samples(2);
    DuplexDiT<float> model(cfg.model, cfg.seed);
    Adam adam(model.weights(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    for (int s = 1; s <= 20; ++s) {
        TrainMetrics m = train_step(model, adam, batch, s, cfg);
        CHECK(std::abs(m.l_total - composite_loss(m.mode, m.l_cond, m.l_img, m.l_box, 0.02)) <= 1e-7);
        CHECK(m.batch == 2);
        CHECK(m.unlabeled == 0);
        CHECK(m.eligible == (m.mode == Mode::generation ? 2 : 0));
    }
}

TEST_CASE("unlabeled samples force generation and do not feed the content loss") {
    TrainConfig cfg = small_config(3);
    cfg.p_gen = 0.0;
    auto batch = labeled_samples(2);
    batch[1].labeled = false;
    batch[1].labels.reset();
    batch[1].content = GrayImage(32, 160, -1.0f);
    DuplexDiT<float> model(cfg.model, cfg.seed);
    Adam adam(model.weights(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    for (int s = 1; s <= 5; ++s) {
        TrainMetrics m = train_step(model, adam, batch, s, cfg);
        CHECK(m.mode == Mode::generation);
        CHECK(m.unlabeled == 1);
        CHECK(m.eligible == 1);
    }
    std::vector<Sample> only_unlabeled = {batch[1]};
    TrainMetrics m = train_step(model, adam, only_unlabeled, 6, cfg);
    CHECK(m.l_cond == 0.0);
    CHECK_THROWS_AS(train_step(model, adam, {}, 7, cfg), Error);
}

TEST_CASE("identical seeds give identical metric streams") {
    TrainConfig cfg = small_config(4);
    cfg.total_steps = 100;
    cfg.checkpoint_interval = 1000;
    LoadedManifest data;
    data.labeled = labeled_samples(4);
    auto a = run(cfg, data, scratch("det_a"));
    auto b = run(cfg, data, scratch("det_b"));
    CHECK(a.size() == 100);
    CHECK(a == b);
    cfg.seed = 5;
    CHECK_FALSE(run(cfg, data, scratch("det_c")) == a);
}

TEST_CASE("resuming reproduces the unbroken run") {
    TrainConfig cfg = small_config(6);
    cfg.total_steps = 40;
    cfg.checkpoint_interval = 15;
    LoadedManifest data;
    data.labeled = labeled_samples(4);
    auto whole = run(cfg, data, scratch("whole"));
    auto dir = scratch("split");
    TrainConfig first = cfg;
    first.total_steps = 15;
    auto head = run(first, data, dir);
    auto tail = run(cfg, data, dir, dir / checkpoint_name(15));
    head.insert(head.end(), tail.begin(), tail.end());
    CHECK(head == whole);

    TrainConfig other = cfg;
    other.seed = 7;
    CHECK_THROWS_AS(run(other, data, dir, dir / checkpoint_name(15)), Error);
}

TEST_CASE("a loaded checkpoint steps exactly like the in-memory state") {
    TrainConfig cfg = small_config(8);
    auto batch = labeled_samples(2);
    DuplexDiT<float> model(cfg.model, cfg.seed);
    Adam adam(model.weights(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    for (int s = 1; s <= 3; ++s) train_step(model, adam, batch, s, cfg);

    Checkpoint ck = decode_checkpoint(encode_checkpoint(make_checkpoint(model, adam, 3, cfg.seed)));
    DuplexDiT<float> copy(ck.config, ck.weights);
    Adam copy_adam(copy.weights(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    copy_adam.m() = ck.adam_m;
    copy_adam.v() = ck.adam_v;

    TrainMetrics a = train_step(model, adam, batch, 4, cfg);
    TrainMetrics b = train_step(copy, copy_adam, batch, 4, cfg);
    CHECK(a.csv_row() == b.csv_row());
    CHECK(flatten(model.weights()) == flatten(copy.weights()));
}

TEST_CASE("checkpoint bookkeeping and metrics log") {
    TrainConfig cfg = small_config(9);
    cfg.total_steps = 6;
    cfg.checkpoint_interval = 6;
    cfg.log_interval = 4;
    LoadedManifest data;
    data.labeled = labeled_samples(2);
    auto dir = scratch("books");
    FitOptions fo;
    fo.out_dir = dir;
    FitResult r = fit(cfg, data, fo);
    CHECK(r.final_step == 6);
    REQUIRE(r.checkpoints.size() == 2);
    CHECK(r.checkpoints[0].filename() == checkpoint_name(6));
    CHECK(r.checkpoints[1].filename() == kFinalCheckpoint);
    CHECK(load_checkpoint(r.checkpoints[1]).step == 6);

    std::ifstream in(r.metrics_path);
    std::string header, row;
    std::getline(in, header);
    CHECK(header == TrainMetrics::csv_header());
    int rows = 0;
    while (std::getline(in, row)) ++rows;
    CHECK(rows == 2);
    fs::remove_all(dir);
}

TEST_CASE("unlabeled-only manifests train generation only") {
    Alphabet alphabet(16);
    SynthOptions opt;
    auto dir = scratch("unlabeled");
    auto records = synthesize_corpus(dir / "data", 3, alphabet, opt, 11);
    for (auto& r : records) r.labels.reset();
    write_manifest(dir / "data" / kManifestName, records);

    TrainConfig cfg = small_config(10);
    cfg.total_steps = 12;
    cfg.p_gen = 0.0;
    cfg.p_syn = 0.0;
    std::vector<TrainMetrics> seen;
    FitOptions fo;
    fo.out_dir = dir / "out";
    fo.on_step = [&](const TrainMetrics& m) { seen.push_back(m); };
    fit(cfg, std::vector<fs::path>{dir / "data" / kManifestName}, fo);
    REQUIRE(seen.size() == 12);
    for (const auto& m : seen) {
        CHECK(m.mode == Mode::generation);
        CHECK(m.unlabeled == m.batch);
    }
    fs::remove_all(dir);
}

TEST_CASE("dropout counts follow the configured rate") {
    TrainConfig cfg = small_config(12);
    cfg.p_gen = 1.0;
    cfg.p_drop = 0.05;
    cfg.batch_size = 1;
    auto batch = labeled_samples(1);
    DuplexDiT<float> model(cfg.model, cfg.seed);
    Adam adam(model.weights(), 0.0, cfg.beta1, cfg.beta2, cfg.eps);
    int dropped = 0, eligible = 0;
    for (int s = 1; s <= 2000; ++s) {
        TrainMetrics m = train_step(model, adam, batch, s, cfg);
        dropped += m.dropped;
        eligible += m.eligible;
    }
    CHECK(eligible == 2000);
    CHECK(std::abs(dropped / 2000.0 - 0.05) < 0.015);
}

}
