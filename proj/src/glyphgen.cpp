#include "unicalli/glyphgen.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>

#include "unicalli/error.hpp"

namespace unicalli {

namespace {

constexpr int kLatticeSize = 7;
constexpr double kLatticeMargin = 0.18;
constexpr double kMinAcceptL1 = 0.12;
constexpr double kMinInk = 0.08;
constexpr double kMaxInk = 0.40;

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

struct Segment {
    Vec2 a;
    Vec2 b;
};

double segment_dist2(const Segment& s, double px, double py) {
    double dx = s.b.x - s.a.x;
    double dy = s.b.y - s.a.y;
    double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((px - s.a.x) * dx + (py - s.a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    double ex = s.a.x + t * dx - px;
    double ey = s.a.y + t * dy - py;
    return ex * ex + ey * ey;
}

// Sets every pixel whose center lies within thickness/2 of a segment, limited
// to `clip`. Returns the tight box of the pixels it set.
std::optional<CharBox> draw_segments(GrayImage& image, std::span<const Segment> segments, double thickness,
                                     const CharBox& clip) {
    if (segments.empty()) return std::nullopt;
    double r = 0.5 * thickness;
    double r2 = r * r;
    double lo_x = 1e30, lo_y = 1e30, hi_x = -1e30, hi_y = -1e30;
    for (const auto& s : segments) {
        lo_x = std::min({lo_x, s.a.x, s.b.x});
        hi_x = std::max({hi_x, s.a.x, s.b.x});
        lo_y = std::min({lo_y, s.a.y, s.b.y});
        hi_y = std::max({hi_y, s.a.y, s.b.y});
    }
    int x_begin = std::max(clip.x0, static_cast<int>(std::floor(lo_x - r)) - 1);
    int x_end = std::min(clip.x1, static_cast<int>(std::ceil(hi_x + r)) + 1);
    int y_begin = std::max(clip.y0, static_cast<int>(std::floor(lo_y - r)) - 1);
    int y_end = std::min(clip.y1, static_cast<int>(std::ceil(hi_y + r)) + 1);

    std::optional<CharBox> box;
    for (int y = y_begin; y < y_end; ++y) {
        for (int x = x_begin; x < x_end; ++x) {
            double px = x + 0.5;
            double py = y + 0.5;
            bool hit = std::ranges::any_of(segments, [&](const Segment& s) { return segment_dist2(s, px, py) <= r2; });
            if (!hit) continue;
            image.at(y, x) = 1.0f;
            if (!box) {
                box = CharBox{x, y, x + 1, y + 1};
            } else {
                box->x0 = std::min(box->x0, x);
                box->y0 = std::min(box->y0, y);
                box->x1 = std::max(box->x1, x + 1);
                box->y1 = std::max(box->y1, y + 1);
            }
        }
    }
    return box;
}

double lattice_coord(int k) {
    return kLatticeMargin + (1.0 - 2.0 * kLatticeMargin) * k / (kLatticeSize - 1);
}

// Placement of one glyph: design space [0,1]^2 -> pixel space.
struct Placement {
    double size = 32.0;
    double slant = 0.0;
    double scale = 1.0;
    double offset_x = 0.0;
    double offset_y = 0.0;
    double origin_x = 0.0;
    double origin_y = 0.0;
    std::vector<Vec2> point_jitter; // one entry per program point, in px
};

std::vector<Vec2> place_points(const Alphabet::Program& program, const Placement& pl) {
    std::vector<Vec2> pts;
    double c = 0.5 * pl.size;
    double shear = std::tan(pl.slant);
    std::size_t k = 0;
    for (const auto& stroke : program) {
        for (const auto& p : stroke) {
            Vec2 j = k < pl.point_jitter.size() ? pl.point_jitter[k] : Vec2{};
            ++k;
            double x = lattice_coord(p.col) * pl.size + j.x;
            double y = lattice_coord(p.row) * pl.size + j.y;
            x += shear * (c - y);
            x = c + pl.scale * (x - c);
            y = c + pl.scale * (y - c);
            pts.push_back({x + pl.offset_x + pl.origin_x, y + pl.offset_y + pl.origin_y});
        }
    }
    return pts;
}

std::vector<Segment> to_segments(const Alphabet::Program& program, const std::vector<Vec2>& pts) {
    std::vector<Segment> segs;
    std::size_t k = 0;
    for (const auto& stroke : program) {
        for (std::size_t i = 0; i + 1 < stroke.size(); ++i) segs.push_back({pts[k + i], pts[k + i + 1]});
        k += stroke.size();
    }
    return segs;
}

std::size_t point_count(const Alphabet::Program& program) {
    std::size_t n = 0;
    for (const auto& s : program) n += s.size();
    return n;
}

double symmetric_jitter(Rng& rng, double amplitude) {
    return amplitude * (2.0 * rng.uniform() - 1.0);
}

Alphabet::Program random_program(Rng& rng) {
    Alphabet::Program program;
    int strokes = rng.uniform_int(3, 6);
    for (int s = 0; s < strokes; ++s) {
        Alphabet::Stroke stroke;
        Alphabet::Point a{rng.uniform_int(0, kLatticeSize - 1), rng.uniform_int(0, kLatticeSize - 1)};
        stroke.push_back(a);
        int points = rng.bernoulli(0.35) ? 3 : 2;
        for (int i = 1; i < points; ++i) {
            Alphabet::Point b;
            do {
                b = {rng.uniform_int(0, kLatticeSize - 1), rng.uniform_int(0, kLatticeSize - 1)};
            } while (std::max(std::abs(b.col - stroke.back().col), std::abs(b.row - stroke.back().row)) < 2);
            stroke.push_back(b);
        }
        program.push_back(std::move(stroke));
    }
    return program;
}

double ink_fraction(const GrayImage& image) {
    auto px = image.pixels();
    auto ink = std::ranges::count_if(px, [](float v) { return v > 0.0f; });
    return static_cast<double>(ink) / static_cast<double>(px.size());
}

double mean_abs_diff(const GrayImage& a, const GrayImage& b) {
    double s = 0.0;
    auto pa = a.pixels();
    auto pb = b.pixels();
    for (std::size_t i = 0; i < pa.size(); ++i) s += std::abs(pa[i] - pb[i]);
    return s / static_cast<double>(pa.size());
}

GrayImage render_program(const Alphabet::Program& program, const Placement& pl, double thickness, int size) {
    GrayImage image(size, size);
    auto segs = to_segments(program, place_points(program, pl));
    draw_segments(image, segs, thickness, CharBox{0, 0, size, size});
    return image;
}

} // namespace

const char* to_string(Source s) {
    return s == Source::real ? "real" : "synthetic";
}

const char* to_string(Polarity p) {
    return p == Polarity::light_on_dark ? "light-on-dark" : "dark-on-light";
}

Source parse_source(std::string_view s) {
    if (s == "real") return Source::real;
    if (s == "synthetic") return Source::synthetic;
    throw Error("unknown source '" + std::string(s) + "'");
}

Polarity parse_polarity(std::string_view s) {
    if (s == "light-on-dark") return Polarity::light_on_dark;
    if (s == "dark-on-light") return Polarity::dark_on_light;
    throw Error("unknown polarity '" + std::string(s) + "'");
}

StyleParams style_for(int style_id, int style_count) {
    if (style_id < 0 || style_id >= style_count) {
        throw Error("style_id " + std::to_string(style_id) + " out of range [0, " + std::to_string(style_count) + ")");
    }
    if (style_id == 0) return StyleParams::canonical();
    Rng rng(hash_words({0x57'71e5ULL, static_cast<std::uint64_t>(style_id)}));
    StyleParams style;
    style.style_id = style_id;
    style.slant = rng.uniform(-0.2, 0.2);
    style.thickness = rng.uniform_int(2, 4);
    style.jitter = rng.uniform(0.5, 2.0);
    return style;
}

ConditionVector build_conditions(Source source, Polarity polarity, int style_id, int script_id,
                                 const ConditionSpace& space) {
    if (style_id < 0 || style_id >= space.styles) {
        throw Error("style_id " + std::to_string(style_id) + " out of range [0, " + std::to_string(space.styles) + ")");
    }
    if (script_id < 0 || script_id >= space.scripts) {
        throw Error("script_id " + std::to_string(script_id) + " out of range [0, " + std::to_string(space.scripts) +
                    ")");
    }
    return {source, polarity, style_id, script_id};
}

Alphabet::Alphabet(int size, std::uint64_t glyph_seed) : glyph_seed_(glyph_seed) {
    if (size < 2) {
        throw Error("alphabet needs at least two glyphs");
    }
    constexpr int kRef = 32;
    const StyleParams canon = StyleParams::canonical();
    std::vector<GrayImage> renders;
    for (int id = 0; id < size; ++id) {
        for (std::uint64_t attempt = 0;; ++attempt) {
            if (attempt > 10000) {
                throw Error("cannot build a separable alphabet of size " + std::to_string(size));
            }
            Rng rng(hash_words({glyph_seed, static_cast<std::uint64_t>(id), attempt}));
            Program program = random_program(rng);
            Placement pl;
            pl.size = kRef;
            GrayImage img = render_program(program, pl, canon.thickness, kRef);
            double ink = ink_fraction(img);
            if (ink < kMinInk || ink > kMaxInk) continue;
            bool distinct = std::ranges::all_of(renders, [&](const GrayImage& r) { return mean_abs_diff(r, img) >= kMinAcceptL1; });
            if (!distinct) continue;
            programs_.push_back(std::move(program));
            renders.push_back(std::move(img));
            break;
        }
    }
    if (!(min_pairwise_l1(kRef) > 0.0)) {
        throw Error("alphabet separability check failed");
    }
}

void Alphabet::check_id(GlyphId id) const {
    if (id < 0 || id >= size()) {
        throw Error("glyph id " + std::to_string(id) + " out of range [0, " + std::to_string(size()) + ")");
    }
}

const Alphabet::Program& Alphabet::program(GlyphId id) const {
    check_id(id);
    return programs_[static_cast<std::size_t>(id)];
}

GrayImage Alphabet::render_glyph(GlyphId id, const StyleParams& style, int size) const {
    check_id(id);
    if (size < 8) {
        throw Error("glyph size " + std::to_string(size) + " below minimum 8");
    }
    if (!(style.thickness >= 1.0)) {
        throw Error("degenerate style: thickness must be >= 1");
    }
    if (!(style.thickness < 0.5 * size)) {
        throw Error("degenerate style: thickness must be below size/2");
    }
    const Program& program = programs_[static_cast<std::size_t>(id)];
    Placement pl;
    pl.size = size;
    pl.slant = style.slant;
    if (style.jitter > 0.0) {
        Rng rng = Rng::derive(glyph_seed_, Stream::glyph_jitter, static_cast<std::uint64_t>(id),
                              static_cast<std::uint64_t>(style.style_id));
        for (std::size_t k = 0; k < point_count(program); ++k) {
            double jx = symmetric_jitter(rng, 0.5 * style.jitter);
            double jy = symmetric_jitter(rng, 0.5 * style.jitter);
            pl.point_jitter.push_back({jx, jy});
        }
    }
    GrayImage image = render_program(program, pl, style.thickness, size);
    double ink = ink_fraction(image);
    if (ink < 0.05 || ink > 0.6) {
        throw Error("style yields ink coverage " + std::to_string(ink) + " outside [0.05, 0.6]");
    }
    return image;
}

GrayImage Alphabet::render_content_canvas(std::span<const GlyphId> ids, const StripGeometry& geometry) const {
    if (static_cast<int>(ids.size()) != geometry.slots) {
        throw Error("content canvas needs " + std::to_string(geometry.slots) + " ids, got " + std::to_string(ids.size()));
    }
    GrayImage canvas(geometry.height(), geometry.width());
    for (int k = 0; k < geometry.slots; ++k) {
        GrayImage glyph = render_glyph(ids[static_cast<std::size_t>(k)], StyleParams::canonical(), geometry.slot);
        for (int y = 0; y < geometry.slot; ++y)
            for (int x = 0; x < geometry.slot; ++x) canvas.at(y, k * geometry.slot + x) = glyph.at(y, x);
    }
    return canvas;
}

StripRender Alphabet::render_strip(std::span<const GlyphId> ids, const StyleParams& style, Rng& rng,
                                   const StripGeometry& geometry) const {
    if (static_cast<int>(ids.size()) != geometry.slots) {
        throw Error("strip needs " + std::to_string(geometry.slots) + " ids, got " + std::to_string(ids.size()));
    }
    for (GlyphId id : ids) check_id(id);
    if (!(style.thickness >= 1.0) || !(style.thickness < 0.5 * geometry.slot)) {
        throw Error("degenerate style thickness");
    }
    const double r = 0.5 * style.thickness;
    StripRender out{GrayImage(geometry.height(), geometry.width()), {}};
    for (int k = 0; k < geometry.slots; ++k) {
        const Program& program = programs_[static_cast<std::size_t>(ids[static_cast<std::size_t>(k)])];
        Placement pl;
        pl.size = geometry.slot;
        pl.slant = style.slant;
        pl.origin_x = k * geometry.slot;
        for (std::size_t i = 0; i < point_count(program); ++i) {
            double jx = symmetric_jitter(rng, 0.5 * style.jitter);
            double jy = symmetric_jitter(rng, 0.5 * style.jitter);
            pl.point_jitter.push_back({jx, jy});
        }
        pl.scale = 1.0 - 0.05 * style.jitter * rng.uniform();
        pl.offset_x = symmetric_jitter(rng, style.jitter);
        pl.offset_y = symmetric_jitter(rng, style.jitter);

        // Keep the ink at least one pixel inside the slot so neighbouring
        // boxes never touch.
        auto pts = place_points(program, pl);
        double lo_x = 1e30, hi_x = -1e30, lo_y = 1e30, hi_y = -1e30;
        for (const auto& p : pts) {
            lo_x = std::min(lo_x, p.x - r);
            hi_x = std::max(hi_x, p.x + r);
            lo_y = std::min(lo_y, p.y - r);
            hi_y = std::max(hi_y, p.y + r);
        }
        double slot_lo = k * geometry.slot + 1.0;
        double slot_hi = (k + 1) * geometry.slot - 1.0;
        if (lo_x < slot_lo) pl.offset_x += slot_lo - lo_x;
        else if (hi_x > slot_hi) pl.offset_x -= hi_x - slot_hi;
        if (lo_y < 1.0) pl.offset_y += 1.0 - lo_y;
        else if (hi_y > geometry.height() - 1.0) pl.offset_y -= hi_y - (geometry.height() - 1.0);

        auto segs = to_segments(program, place_points(program, pl));
        CharBox clip{k * geometry.slot, 0, (k + 1) * geometry.slot, geometry.height()};
        auto box = draw_segments(out.image, segs, style.thickness, clip);
        if (!box) {
            throw Error("glyph rendered without ink");
        }
        out.boxes.push_back(*box);
    }

    if (style.ligature) {
        // Cubic connector from the right-centre of box k to the left-centre of box k+1.
        for (std::size_t k = 0; k + 1 < out.boxes.size(); ++k) {
            const CharBox& a = out.boxes[k];
            const CharBox& b = out.boxes[k + 1];
            Vec2 p0{static_cast<double>(a.x1) - 0.5, 0.5 * (a.y0 + a.y1)};
            Vec2 p3{static_cast<double>(b.x0) + 0.5, 0.5 * (b.y0 + b.y1)};
            double dx = (p3.x - p0.x) / 3.0;
            double sag = 0.15 * geometry.slot;
            Vec2 p1{p0.x + dx, p0.y + sag};
            Vec2 p2{p3.x - dx, p3.y - sag};
            std::vector<Segment> segs;
            constexpr int kPieces = 16;
            Vec2 prev = p0;
            for (int i = 1; i <= kPieces; ++i) {
                double t = static_cast<double>(i) / kPieces;
                double u = 1.0 - t;
                Vec2 q{u * u * u * p0.x + 3 * u * u * t * p1.x + 3 * u * t * t * p2.x + t * t * t * p3.x,
                       u * u * u * p0.y + 3 * u * u * t * p1.y + 3 * u * t * t * p2.y + t * t * t * p3.y};
                q.y = std::clamp(q.y, r, geometry.height() - r);
                segs.push_back({prev, q});
                prev = q;
            }
            draw_segments(out.image, segs, style.thickness, CharBox{0, 0, geometry.width(), geometry.height()});
        }
    }
    return out;
}

std::vector<GrayImage> Alphabet::atlas(int size) const {
    std::vector<GrayImage> out;
    out.reserve(programs_.size());
    for (int id = 0; id < this->size(); ++id) out.push_back(render_glyph(id, StyleParams::canonical(), size));
    return out;
}

double Alphabet::min_pairwise_l1(int size) const {
    auto renders = atlas(size);
    double best = 1e30;
    for (std::size_t i = 0; i < renders.size(); ++i)
        for (std::size_t j = i + 1; j < renders.size(); ++j) best = std::min(best, mean_abs_diff(renders[i], renders[j]));
    return best;
}

GrayImage rasterize_box_map(std::span<const CharBox> boxes, int height, int width) {
    GrayImage map(height, width, -1.0f);
    for (const auto& b : boxes) {
        if (!b.valid_within(height, width)) {
            throw Error("box (" + std::to_string(b.x0) + "," + std::to_string(b.y0) + "," + std::to_string(b.x1) + "," +
                        std::to_string(b.y1) + ") outside " + std::to_string(height) + "x" + std::to_string(width));
        }
        for (int y = b.y0; y < b.y1; ++y)
            for (int x = b.x0; x < b.x1; ++x) map.at(y, x) = 1.0f;
    }
    return map;
}

std::vector<CharBox> extract_boxes(const GrayImage& box_map, float threshold) {
    const int h = box_map.height();
    const int w = box_map.width();
    std::vector<char> seen(static_cast<std::size_t>(h) * w, 0);
    std::vector<CharBox> boxes;
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::size_t idx = static_cast<std::size_t>(y) * w + x;
            if (seen[idx] || !(box_map.at(y, x) > threshold)) continue;
            CharBox box{x, y, x + 1, y + 1};
            seen[idx] = 1;
            stack.push_back({y, x});
            while (!stack.empty()) {
                auto [cy, cx] = stack.back();
                stack.pop_back();
                box.x0 = std::min(box.x0, cx);
                box.y0 = std::min(box.y0, cy);
                box.x1 = std::max(box.x1, cx + 1);
                box.y1 = std::max(box.y1, cy + 1);
                constexpr int dy[] = {-1, 1, 0, 0};
                constexpr int dx[] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    int ny = cy + dy[k];
                    int nx = cx + dx[k];
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                    std::size_t n = static_cast<std::size_t>(ny) * w + nx;
                    if (seen[n] || !(box_map.at(ny, nx) > threshold)) continue;
                    seen[n] = 1;
                    stack.push_back({ny, nx});
                }
            }
            boxes.push_back(box);
        }
    }
    std::ranges::sort(boxes, [](const CharBox& a, const CharBox& b) { return std::tie(a.x0, a.y0) < std::tie(b.x0, b.y0); });
    return boxes;
}

std::optional<CharBox> tight_box(const GrayImage& image, const CharBox& region) {
    std::optional<CharBox> box;
    for (int y = region.y0; y < region.y1; ++y) {
        for (int x = region.x0; x < region.x1; ++x) {
            if (!(image.at(y, x) > 0.0f)) continue;
            if (!box) {
                box = CharBox{x, y, x + 1, y + 1};
            } else {
                box->x0 = std::min(box->x0, x);
                box->y0 = std::min(box->y0, y);
                box->x1 = std::max(box->x1, x + 1);
                box->y1 = std::max(box->y1, y + 1);
            }
        }
    }
    return box;
}

Sample assemble_sample(const Alphabet& alphabet, GrayImage strip, std::vector<CharBox> boxes,
                       std::optional<std::vector<GlyphId>> labels, const ConditionVector& cond,
                       const StripGeometry& geometry) {
    if (strip.height() != geometry.height() || strip.width() != geometry.width()) {
        throw Error("strip is " + std::to_string(strip.height()) + "x" + std::to_string(strip.width()) + ", expected " +
                    std::to_string(geometry.height()) + "x" + std::to_string(geometry.width()));
    }
    Sample s;
    s.content = labels ? alphabet.render_content_canvas(*labels, geometry) : GrayImage(geometry.height(), geometry.width());
    s.box_map = rasterize_box_map(boxes, geometry.height(), geometry.width());
    s.strip = std::move(strip);
    s.boxes = std::move(boxes);
    s.labeled = labels.has_value();
    s.labels = std::move(labels);
    s.cond = cond;
    return s;
}

Sample synthesize_sample(const Alphabet& alphabet, const SynthOptions& options, Rng& rng) {
    std::vector<GlyphId> ids;
    for (int k = 0; k < options.geometry.slots; ++k) ids.push_back(rng.uniform_int(0, alphabet.size() - 1));
    int style_id = rng.uniform_int(0, options.conditions.styles - 1);
    int script_id = rng.uniform_int(0, options.conditions.scripts - 1);
    Polarity polarity = rng.bernoulli(0.5) ? Polarity::light_on_dark : Polarity::dark_on_light;
    StyleParams style = style_for(style_id, options.conditions.styles);
    style.ligature = rng.bernoulli(options.ligature_rate);
    StripRender render = alphabet.render_strip(ids, style, rng, options.geometry);
    auto cond = build_conditions(Source::synthetic, polarity, style_id, script_id, options.conditions);
    return assemble_sample(alphabet, std::move(render.image), std::move(render.boxes), std::move(ids), cond,
                           options.geometry);
}

} // namespace unicalli
