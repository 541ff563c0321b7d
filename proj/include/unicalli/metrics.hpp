#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unicalli/glyphgen.hpp"

namespace unicalli {

// Mean absolute pixel difference in [-1, 1] units.
double l1(const GrayImage& a, const GrayImage& b);

// Images mapped to [0, 1]; uniform 8x8 windows at stride 4,
// C1 = 0.01^2, C2 = 0.03^2; mean over windows.
double ssim(const GrayImage& a, const GrayImage& b);

double box_iou(const CharBox& a, const CharBox& b);

// Greedy one-to-one matching by descending IoU; unmatched boxes score 0 and
// the mean runs over max(|pred|, |truth|). Two empty lists score 1.
double mean_box_iou(std::span<const CharBox> pred, std::span<const CharBox> truth);

struct CharAccuracy {
    double char_rate = 0.0;
    double sequence_rate = 0.0;
};

CharAccuracy char_accuracy(std::span<const GlyphId> pred, std::span<const GlyphId> truth);

struct SampleEval {
    std::string name;
    std::optional<double> l1;
    std::optional<double> ssim;
    std::optional<double> box_iou;
    std::optional<CharAccuracy> accuracy;
};

struct EvalReport {
    std::vector<SampleEval> samples;

    // Means over the samples that carry each metric.
    SampleEval aggregate() const;
    // Header, one row per sample and a final "mean" row. The fid and lpips
    // columns are always empty.
    std::string to_csv() const;
};

} // namespace unicalli
