#include "unicalli/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "unicalli/error.hpp"

namespace unicalli {

std::vector<std::vector<std::size_t>> cluster_columns(std::span<const CharBox> boxes, double gap) {
    if (!(gap > 0.0)) {
        throw Error("column gap must be positive");
    }
    std::vector<std::size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return boxes[a].center_x() < boxes[b].center_x(); });

    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (k == 0 || boxes[order[k]].center_x() - boxes[order[k - 1]].center_x() > gap) groups.emplace_back();
        groups.back().push_back(order[k]);
    }
    for (auto& g : groups) {
        std::ranges::stable_sort(g, [&](std::size_t a, std::size_t b) { return boxes[a].y0 < boxes[b].y0; });
    }
    auto mean_x = [&](const std::vector<std::size_t>& g) {
        double s = 0.0;
        for (auto i : g) s += boxes[i].center_x();
        return s / static_cast<double>(g.size());
    };
    std::ranges::stable_sort(groups, [&](const auto& a, const auto& b) { return mean_x(a) < mean_x(b); });
    return groups;
}

double default_column_gap(std::span<const CharBox> boxes) {
    if (boxes.empty()) return 1.0;
    std::vector<int> widths;
    for (const auto& b : boxes) widths.push_back(b.width());
    std::ranges::sort(widths);
    std::size_t n = widths.size();
    double median = n % 2 ? widths[n / 2] : 0.5 * (widths[n / 2 - 1] + widths[n / 2]);
    return std::max(0.6 * median, 1e-6);
}

std::vector<std::size_t> sample_window(std::span<const std::size_t> column, int count, Rng& rng) {
    if (count <= 0 || static_cast<int>(column.size()) < count) {
        throw Error("column of " + std::to_string(column.size()) + " characters is shorter than window " +
                    std::to_string(count));
    }
    int start = rng.uniform_int(0, static_cast<int>(column.size()) - count);
    return {column.begin() + start, column.begin() + start + count};
}

CropResult crop_with_padding(const GrayImage& image, std::span<const CharBox> boxes, int pad) {
    if (boxes.empty()) {
        throw Error("crop needs at least one box");
    }
    CharBox u = boxes.front();
    for (const auto& b : boxes) {
        u.x0 = std::min(u.x0, b.x0);
        u.y0 = std::min(u.y0, b.y0);
        u.x1 = std::max(u.x1, b.x1);
        u.y1 = std::max(u.y1, b.y1);
    }
    CharBox region{std::max(0, u.x0 - pad), std::max(0, u.y0 - pad), std::min(image.width(), u.x1 + pad),
                   std::min(image.height(), u.y1 + pad)};
    CropResult out;
    out.image = crop(image, region);
    out.origin_x = region.x0;
    out.origin_y = region.y0;
    for (const auto& b : boxes) out.boxes.push_back({b.x0 - region.x0, b.y0 - region.y0, b.x1 - region.x0, b.y1 - region.y0});
    return out;
}

double foreground_ratio_score(double fraction) {
    constexpr double kLow = 0.05;
    constexpr double kHigh = 0.35;
    constexpr double kZero = 0.6;
    if (fraction <= 0.0 || fraction >= kZero) return 0.0;
    if (fraction < kLow) return fraction / kLow;
    if (fraction <= kHigh) return 1.0;
    return (kZero - fraction) / (kZero - kHigh);
}

namespace {

std::vector<float> gradient_magnitude(const GrayImage& image) {
    const int h = image.height();
    const int w = image.width();
    std::vector<float> mag(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float gx = 0.5f * (image.at(y, std::min(x + 1, w - 1)) - image.at(y, std::max(x - 1, 0)));
            float gy = 0.5f * (image.at(std::min(y + 1, h - 1), x) - image.at(std::max(y - 1, 0), x));
            mag[static_cast<std::size_t>(y) * w + x] = std::sqrt(gx * gx + gy * gy);
        }
    }
    return mag;
}

float percentile_90(std::vector<float> values) {
    std::size_t k = static_cast<std::size_t>(0.9 * static_cast<double>(values.size() - 1));
    std::ranges::nth_element(values, values.begin() + static_cast<std::ptrdiff_t>(k));
    return values[k];
}

// Symmetric median: the mean of the two middle values for even counts, so that
// the median of -x is exactly -median(x).
float median(std::span<const float> pixels) {
    std::vector<float> v(pixels.begin(), pixels.end());
    std::size_t n = v.size();
    std::ranges::nth_element(v, v.begin() + static_cast<std::ptrdiff_t>(n / 2));
    float upper = v[n / 2];
    if (n % 2) return upper;
    float lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2));
    return 0.5f * (lower + upper);
}

long ink_count(const GrayImage& mask) {
    return std::ranges::count_if(mask.pixels(), [](float v) { return v > 0.0f; });
}

} // namespace

double binarization_score(const GrayImage& image, const GrayImage& mask) {
    const int h = image.height();
    const int w = image.width();
    double fraction = static_cast<double>(ink_count(mask)) / static_cast<double>(mask.pixels().size());

    auto mag = gradient_magnitude(image);
    float cut = percentile_90(mag);
    long strong = 0;
    long covered = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!(mag[static_cast<std::size_t>(y) * w + x] > cut)) continue;
            ++strong;
            bool near = false;
            for (int dy = -1; dy <= 1 && !near; ++dy)
                for (int dx = -1; dx <= 1 && !near; ++dx) {
                    int ny = y + dy;
                    int nx = x + dx;
                    near = ny >= 0 && ny < h && nx >= 0 && nx < w && mask.at(ny, nx) > 0.0f;
                }
            if (near) ++covered;
        }
    }
    double edge = strong > 0 ? static_cast<double>(covered) / static_cast<double>(strong) : 0.0;
    return 0.5 * foreground_ratio_score(fraction) + 0.5 * edge;
}

Binarization binarize_with_polarity(const GrayImage& image) {
    auto px = image.pixels();
    if (px.empty() || std::ranges::all_of(px, [&](float v) { return v == px.front(); })) {
        throw Error("binarization: constant image has no determinable polarity");
    }
    float mid = median(px);
    GrayImage above(image.height(), image.width());
    GrayImage below(image.height(), image.width());
    for (std::size_t i = 0; i < px.size(); ++i) {
        above.pixels()[i] = px[i] > mid ? 1.0f : -1.0f;
        below.pixels()[i] = px[i] < mid ? 1.0f : -1.0f;
    }
    double sa = binarization_score(image, above);
    double sb = binarization_score(image, below);

    // Ties are resolved from the masks alone (fewer ink pixels, then the
    // lexicographically larger mask) so inverting the input only flips the flag.
    bool pick_above;
    if (sa != sb) {
        pick_above = sa > sb;
    } else if (ink_count(above) != ink_count(below)) {
        pick_above = ink_count(above) < ink_count(below);
    } else {
        pick_above = !std::ranges::lexicographical_compare(above.pixels(), below.pixels());
    }
    Binarization out;
    out.score_above = sa;
    out.score_below = sb;
    out.polarity = pick_above ? Polarity::light_on_dark : Polarity::dark_on_light;
    out.mask = pick_above ? std::move(above) : std::move(below);
    return out;
}

SampleMixer::SampleMixer(std::vector<Sample> labeled, std::vector<Sample> unlabeled, Generator synth, double p_syn)
    : labeled_(std::move(labeled)), unlabeled_(std::move(unlabeled)), synth_(std::move(synth)), p_syn_(p_syn) {
    if (!(p_syn >= 0.0 && p_syn <= 1.0)) {
        throw Error("p_syn must lie in [0, 1]");
    }
    if (labeled_.empty() && unlabeled_.empty() && !synth_) {
        throw Error("sample mixer: all sources are empty");
    }
}

Sample SampleMixer::draw(Rng& rng) const {
    bool synthetic = rng.bernoulli(p_syn_);
    std::size_t pool = pool_size();
    if (synth_ && (synthetic || pool == 0)) {
        return synth_(rng);
    }
    auto k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool) - 1));
    return k < labeled_.size() ? labeled_[k] : unlabeled_[k - labeled_.size()];
}

std::vector<Sample> ingest_page(const Alphabet& alphabet, const GrayImage& page, std::span<const CharBox> boxes,
                                std::optional<std::span<const GlyphId>> labels, const IngestOptions& options,
                                Rng& rng) {
    if (labels && labels->size() != boxes.size()) {
        throw Error("ingest: labels and boxes differ in length");
    }
    for (const auto& b : boxes) {
        if (!b.valid_within(page.height(), page.width())) throw Error("ingest: box outside page");
    }
    const StripGeometry& geo = options.geometry;
    double gap = options.column_gap.value_or(default_column_gap(boxes));
    std::vector<Sample> out;
    for (const auto& column : cluster_columns(boxes, gap)) {
        if (static_cast<int>(column.size()) < geo.slots) continue;
        auto window = sample_window(column, geo.slots, rng);
        std::vector<CharBox> picked;
        for (auto i : window) picked.push_back(boxes[i]);
        CropResult cropped = crop_with_padding(page, picked, options.pad);

        GrayImage segment = cropped.image;
        std::vector<CharBox> seg_boxes = cropped.boxes;
        if (options.transpose) {
            segment = transpose(segment);
            for (auto& b : seg_boxes) b = {b.y0, b.x0, b.y1, b.x1};
        }
        Binarization bin = binarize_with_polarity(segment);

        double sx = static_cast<double>(geo.width()) / segment.width();
        double sy = static_cast<double>(geo.height()) / segment.height();
        std::vector<CharBox> scaled;
        for (const auto& b : seg_boxes) {
            int x0 = std::clamp(static_cast<int>(std::lround(b.x0 * sx)), 0, geo.width() - 1);
            int y0 = std::clamp(static_cast<int>(std::lround(b.y0 * sy)), 0, geo.height() - 1);
            int x1 = std::clamp(static_cast<int>(std::lround(b.x1 * sx)), x0 + 1, geo.width());
            int y1 = std::clamp(static_cast<int>(std::lround(b.y1 * sy)), y0 + 1, geo.height());
            scaled.push_back({x0, y0, x1, y1});
        }
        std::optional<std::vector<GlyphId>> ids;
        if (labels) {
            ids.emplace();
            for (auto i : window) ids->push_back((*labels)[i]);
        }
        auto cond = build_conditions(options.source, bin.polarity, options.style_id, options.script_id, options.conditions);
        out.push_back(assemble_sample(alphabet, resize_nearest(bin.mask, geo.height(), geo.width()), std::move(scaled),
                                      std::move(ids), cond, geo));
    }
    return out;
}

} // namespace unicalli
