#include "unicalli/manifest.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "unicalli/error.hpp"
#include "unicalli/pipeline.hpp"

namespace unicalli {

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = s.find(sep, start);
        out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

int parse_int(std::string_view s, const std::string& where) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw Error(where + ": expected integer, got '" + std::string(s) + "'");
    }
    return v;
}

} // namespace

std::string format_record(const ManifestRecord& r) {
    std::ostringstream out;
    out << r.strip_path << '\t' << r.count << '\t';
    if (r.labels) {
        for (std::size_t i = 0; i < r.labels->size(); ++i) out << (i ? "," : "") << (*r.labels)[i];
    } else {
        out << '?';
    }
    out << '\t';
    for (std::size_t i = 0; i < r.boxes.size(); ++i) {
        const auto& b = r.boxes[i];
        out << (i ? ";" : "") << b.x0 << ',' << b.y0 << ',' << b.x1 << ',' << b.y1;
    }
    out << '\t' << r.style_id << '\t' << r.script_id << '\t' << to_string(r.source) << '\t' << to_string(r.polarity);
    return out.str();
}

ManifestRecord parse_record(std::string_view line, int line_number) {
    const std::string where = "manifest line " + std::to_string(line_number);
    auto fields = split(line, '\t');
    if (fields.size() != 8) {
        throw Error(where + ": expected 8 tab-separated fields, got " + std::to_string(fields.size()));
    }
    for (char c : line) {
        if (static_cast<unsigned char>(c) > 0x7e) throw Error(where + ": non 7-bit character");
    }
    ManifestRecord r;
    r.strip_path = std::string(fields[0]);
    r.count = parse_int(fields[1], where + " N");
    if (fields[2] != "?") {
        std::vector<GlyphId> labels;
        for (auto tok : split(fields[2], ',')) labels.push_back(parse_int(tok, where + " labels"));
        if (static_cast<int>(labels.size()) != r.count) throw Error(where + ": label count differs from N");
        r.labels = std::move(labels);
    }
    if (!fields[3].empty()) {
        for (auto tok : split(fields[3], ';')) {
            auto c = split(tok, ',');
            if (c.size() != 4) throw Error(where + ": box needs 4 coordinates");
            r.boxes.push_back({parse_int(c[0], where + " box"), parse_int(c[1], where + " box"),
                               parse_int(c[2], where + " box"), parse_int(c[3], where + " box")});
        }
    }
    if (static_cast<int>(r.boxes.size()) != r.count) throw Error(where + ": box count differs from N");
    r.style_id = parse_int(fields[4], where + " style_id");
    r.script_id = parse_int(fields[5], where + " script_id");
    try {
        r.source = parse_source(fields[6]);
        r.polarity = parse_polarity(fields[7]);
    } catch (const Error& e) {
        throw Error(where + ": " + e.what());
    }
    return r;
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open manifest " + path.string());
    }
    std::vector<ManifestRecord> out;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        out.push_back(parse_record(line, n));
    }
    return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
    std::string text;
    for (const auto& r : records) text += format_record(r) + "\n";
    write_file_atomic(path, text);
}

Sample load_record(const ManifestRecord& record, const std::filesystem::path& base_dir, const Alphabet& alphabet,
                   const StripGeometry& geometry, const ConditionSpace& conditions) {
    if (record.count != geometry.slots) {
        throw Error(record.strip_path + ": N=" + std::to_string(record.count) + " but strips hold " +
                    std::to_string(geometry.slots));
    }
    GrayImage raw = read_pgm(base_dir / record.strip_path);
    if (raw.height() != geometry.height() || raw.width() != geometry.width()) {
        throw Error(record.strip_path + ": dimension mismatch");
    }
    Binarization bin = binarize_with_polarity(raw);
    auto cond = build_conditions(record.source, record.polarity, record.style_id, record.script_id, conditions);
    if (record.labels) {
        for (GlyphId id : *record.labels) {
            if (id < 0 || id >= alphabet.size()) throw Error(record.strip_path + ": label out of alphabet range");
        }
    }
    return assemble_sample(alphabet, std::move(bin.mask), record.boxes, record.labels, cond, geometry);
}

LoadedManifest load_manifest(const std::filesystem::path& path, const Alphabet& alphabet,
                             const StripGeometry& geometry, const ConditionSpace& conditions) {
    LoadedManifest out;
    auto base = path.parent_path();
    for (const auto& r : read_manifest(path)) {
        Sample s = load_record(r, base, alphabet, geometry, conditions);
        (s.labeled ? out.labeled : out.unlabeled).push_back(std::move(s));
    }
    return out;
}

std::vector<ManifestRecord> synthesize_corpus(const std::filesystem::path& out_dir, int count,
                                              const Alphabet& alphabet, const SynthOptions& options,
                                              std::uint64_t seed) {
    std::filesystem::create_directories(out_dir);
    std::vector<ManifestRecord> records;
    for (int k = 0; k < count; ++k) {
        Rng rng = Rng::derive(seed, Stream::synth, static_cast<std::uint64_t>(k));
        Sample s = synthesize_sample(alphabet, options, rng);
        char stem[32];
        std::snprintf(stem, sizeof stem, "%05d", k);
        ManifestRecord r;
        r.strip_path = std::string("strip_") + stem + ".pgm";
        r.count = options.geometry.slots;
        r.labels = s.labels;
        r.boxes = s.boxes;
        r.style_id = s.cond.style_id;
        r.script_id = s.cond.script_id;
        r.source = s.cond.source;
        r.polarity = s.cond.polarity;
        GrayImage stored = s.cond.polarity == Polarity::dark_on_light ? invert(s.strip) : s.strip;
        write_pgm(out_dir / r.strip_path, stored);
        write_pgm(out_dir / (std::string("content_") + stem + ".pgm"), s.content);
        write_pgm(out_dir / (std::string("boxmap_") + stem + ".pgm"), s.box_map);
        records.push_back(std::move(r));
    }
    write_manifest(out_dir / kManifestName, records);
    return records;
}

} // namespace unicalli
