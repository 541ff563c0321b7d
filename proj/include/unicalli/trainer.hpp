#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "unicalli/checkpoint.hpp"
#include "unicalli/codec.hpp"
#include "unicalli/duplexdit.hpp"
#include "unicalli/flowcore.hpp"
#include "unicalli/manifest.hpp"

namespace unicalli {

struct TrainConfig {
    std::uint64_t seed = 0;
    std::int64_t total_steps = 1000;
    int batch_size = 8;
    double p_gen = 0.5;
    double p_drop = 0.05;
    double p_syn = 0.2;
    double lambda = 0.02;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    std::int64_t checkpoint_interval = 1000;
    std::int64_t log_interval = 10;
    double ligature_rate = 0.3; // for on-the-fly synthetic samples
    ModelConfig model;

    void validate() const;
};

struct TrainMetrics {
    std::int64_t step = 0;
    Mode mode = Mode::generation;
    double l_cond = 0.0;
    double l_img = 0.0;
    double l_box = 0.0;
    double l_total = 0.0;
    double grad_norm = 0.0;
    int dropped = 0;  // labeled generation samples whose content was dropped to t_c = 1
    int eligible = 0; // labeled generation samples
    int unlabeled = 0;
    int batch = 0;
    double wall_time = 0.0; // seconds since fit started

    // Everything except wall_time, at full precision.
    std::string csv_row() const;
    static std::string csv_header();
};

class Adam {
public:
    Adam(const Weights<float>& like, double lr, double beta1, double beta2, double eps);

    // `t` is the 1-based update count used for bias correction.
    void update(Weights<float>& weights, const Weights<float>& grads, std::int64_t t);

    Weights<float>& m() { return m_; }
    Weights<float>& v() { return v_; }
    const Weights<float>& m() const { return m_; }
    const Weights<float>& v() const { return v_; }

private:
    double lr_, beta1_, beta2_, eps_;
    Weights<float> m_, v_;
};

// One optimizer step on a mode-homogeneous batch. `step` is the 1-based
// index of this step; all randomness derives from (cfg.seed, step).
TrainMetrics train_step(DuplexDiT<float>& model, Adam& adam, const std::vector<Sample>& batch, std::int64_t step,
                        const TrainConfig& cfg, const Codec& codec = Codec{});

// Mode for a step before the unlabeled override.
Mode draw_mode(const TrainConfig& cfg, std::int64_t step);

struct FitOptions {
    std::filesystem::path out_dir;
    std::optional<std::filesystem::path> resume;
    std::function<void(const std::string&)> log; // progress messages
    std::function<void(const TrainMetrics&)> on_step;
};

struct FitResult {
    std::int64_t final_step = 0;
    std::vector<std::filesystem::path> checkpoints;
    std::filesystem::path metrics_path;
};

FitResult fit(const TrainConfig& cfg, const LoadedManifest& data, const FitOptions& options);
FitResult fit(const TrainConfig& cfg, const std::vector<std::filesystem::path>& manifests, const FitOptions& options);

Checkpoint make_checkpoint(const DuplexDiT<float>& model, const Adam& adam, std::int64_t step, std::uint64_t seed);
std::string checkpoint_name(std::int64_t step);
inline constexpr const char* kFinalCheckpoint = "final.ucal";
inline constexpr const char* kMetricsLog = "metrics.csv";

} // namespace unicalli
