#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "unicalli/glyphgen.hpp"

namespace unicalli {

// Single-linkage grouping of boxes by x-centre. Boxes whose sorted x-centres
// differ by at most `gap` join one group; indices inside a group are ordered by
// y0 and groups by mean x-centre.
std::vector<std::vector<std::size_t>> cluster_columns(std::span<const CharBox> boxes, double gap);

// 0.6 x median box width, the default column gap.
double default_column_gap(std::span<const CharBox> boxes);

// Contiguous run of `count` entries with a uniformly drawn start offset.
std::vector<std::size_t> sample_window(std::span<const std::size_t> column, int count, Rng& rng);

struct CropResult {
    GrayImage image;
    std::vector<CharBox> boxes; // in crop coordinates
    int origin_x = 0;
    int origin_y = 0;
};

CropResult crop_with_padding(const GrayImage& image, std::span<const CharBox> boxes, int pad);

struct Binarization {
    GrayImage mask; // foreground = +1, background = -1
    Polarity polarity = Polarity::light_on_dark;
    double score_above = 0.0;
    double score_below = 0.0;
};

// Builds the above-median and below-median candidate masks, scores each by
// foreground ratio and edge alignment, and returns the winner with ink = +1.
// Candidate A (above) winning means the ink is lighter than the ground.
Binarization binarize_with_polarity(const GrayImage& image);

// Score of one candidate mask against the image's gradient field; exposed for
// the brute-force checks in tests.
double binarization_score(const GrayImage& image, const GrayImage& mask);
double foreground_ratio_score(double fraction);

// Source mixing: each draw is synthetic with probability p_syn, otherwise a
// uniform pick from the union of the labeled and unlabeled pools.
class SampleMixer {
public:
    using Generator = std::function<Sample(Rng&)>;

    SampleMixer(std::vector<Sample> labeled, std::vector<Sample> unlabeled, Generator synth, double p_syn);

    Sample draw(Rng& rng) const;

    std::size_t pool_size() const { return labeled_.size() + unlabeled_.size(); }
    double p_syn() const { return p_syn_; }

private:
    std::vector<Sample> labeled_;
    std::vector<Sample> unlabeled_;
    Generator synth_;
    double p_syn_;
};

struct IngestOptions {
    StripGeometry geometry;
    int pad = 2;
    std::optional<double> column_gap; // default_column_gap when unset
    bool transpose = true;            // page columns are vertical; strips are horizontal
    Source source = Source::real;
    int style_id = 0;
    int script_id = 0;
    ConditionSpace conditions;
};

// Page-level preprocessing: group annotated boxes into columns, keep columns
// with at least `slots` characters, draw one window per column, crop with
// padding, binarize with polarity normalization and resample to the strip
// geometry. `labels` runs parallel to `boxes` when present.
std::vector<Sample> ingest_page(const Alphabet& alphabet, const GrayImage& page, std::span<const CharBox> boxes,
                                std::optional<std::span<const GlyphId>> labels, const IngestOptions& options,
                                Rng& rng);

} // namespace unicalli
