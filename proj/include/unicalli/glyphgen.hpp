#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "unicalli/image.hpp"
#include "unicalli/rng.hpp"

namespace unicalli {

using GlyphId = int;

inline constexpr std::uint64_t kDefaultGlyphSeed = 0x5eed'ca11'1000ULL;

struct StyleParams {
    int style_id = 0;
    double slant = 0.0;     // radians, positive leans the top to the right
    double thickness = 3.0; // stroke width in px
    double jitter = 0.0;    // px
    bool ligature = false;

    static StyleParams canonical() { return {}; }
    bool operator==(const StyleParams&) const = default;
};

// Deterministic style table. Style 0 is canonical; the rest are drawn from a
// fixed hash of the style id so every process agrees on them.
StyleParams style_for(int style_id, int style_count);

enum class Source { real, synthetic };
enum class Polarity { light_on_dark, dark_on_light };

const char* to_string(Source s);
const char* to_string(Polarity p);
Source parse_source(std::string_view s);
Polarity parse_polarity(std::string_view s);

struct ConditionSpace {
    int styles = 8;
    int scripts = 5;

    int combinations() const { return 2 * 2 * styles * scripts; }
};

struct ConditionVector {
    Source source = Source::synthetic;
    Polarity polarity = Polarity::light_on_dark;
    int style_id = 0;
    int script_id = 0;

    bool operator==(const ConditionVector&) const = default;
};

ConditionVector build_conditions(Source source, Polarity polarity, int style_id, int script_id,
                                 const ConditionSpace& space = {});

// Horizontal strip of `slots` square cells of side `slot`.
struct StripGeometry {
    int slot = 32;
    int slots = 5;

    int height() const { return slot; }
    int width() const { return slot * slots; }
};

struct StripRender {
    GrayImage image;
    std::vector<CharBox> boxes;
};

struct Sample {
    GrayImage strip;   // normalized: ink = +1
    GrayImage content; // canonical renders at fixed slots; blank when unlabeled
    GrayImage box_map;
    std::optional<std::vector<GlyphId>> labels;
    std::vector<CharBox> boxes;
    ConditionVector cond;
    bool labeled = false;
};

// Pseudo-glyph alphabet. Each glyph is a 3-6 stroke program on a 7x7 control
// lattice derived from (glyph seed, id). Construction rejects programs that
// are too close to an earlier glyph, then verifies pairwise separability of
// the canonical renders exhaustively.
class Alphabet {
public:
    explicit Alphabet(int size = 64, std::uint64_t glyph_seed = kDefaultGlyphSeed);

    int size() const { return static_cast<int>(programs_.size()); }
    std::uint64_t glyph_seed() const { return glyph_seed_; }

    GrayImage render_glyph(GlyphId id, const StyleParams& style, int size) const;
    GrayImage render_content_canvas(std::span<const GlyphId> ids, const StripGeometry& geometry = {}) const;
    StripRender render_strip(std::span<const GlyphId> ids, const StyleParams& style, Rng& rng,
                             const StripGeometry& geometry = {}) const;

    // Canonical renders of every glyph at `size`, indexed by id.
    std::vector<GrayImage> atlas(int size) const;

    // Smallest mean-absolute distance between canonical renders of two glyphs.
    double min_pairwise_l1(int size = 32) const;

    struct Point {
        int col = 0;
        int row = 0;
    };
    using Stroke = std::vector<Point>;
    using Program = std::vector<Stroke>;

    const Program& program(GlyphId id) const;

private:
    void check_id(GlyphId id) const;

    std::uint64_t glyph_seed_;
    std::vector<Program> programs_;
};

GrayImage rasterize_box_map(std::span<const CharBox> boxes, int height, int width);

// Bounding boxes of 4-connected components above `threshold`, sorted by x0
// then y0.
std::vector<CharBox> extract_boxes(const GrayImage& box_map, float threshold = 0.0f);

// Tight box around pixels > 0 inside `region`; nullopt when the region holds no ink.
std::optional<CharBox> tight_box(const GrayImage& image, const CharBox& region);

struct SynthOptions {
    StripGeometry geometry;
    ConditionSpace conditions;
    double ligature_rate = 0.3;
};

// Fresh labeled synthetic sample: uniform ids, style, script and polarity.
Sample synthesize_sample(const Alphabet& alphabet, const SynthOptions& options, Rng& rng);

// Builds the content canvas and box map that accompany a strip.
Sample assemble_sample(const Alphabet& alphabet, GrayImage strip, std::vector<CharBox> boxes,
                       std::optional<std::vector<GlyphId>> labels, const ConditionVector& cond,
                       const StripGeometry& geometry = {});

} // namespace unicalli
