#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "unicalli/glyphgen.hpp"

namespace unicalli {

// One manifest line: tab-separated
//   strip path, N, labels ("3,1,4,1,5" or "?"), boxes ("x0,y0,x1,y1;..."),
//   style_id, script_id, source, polarity
struct ManifestRecord {
    std::string strip_path;
    int count = 0;
    std::optional<std::vector<GlyphId>> labels;
    std::vector<CharBox> boxes;
    int style_id = 0;
    int script_id = 0;
    Source source = Source::synthetic;
    Polarity polarity = Polarity::light_on_dark;

    bool operator==(const ManifestRecord&) const = default;
};

std::string format_record(const ManifestRecord& record);
ManifestRecord parse_record(std::string_view line, int line_number = 0);

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

// Reads the strip referenced by `record` (relative to `base_dir`), normalizes
// its polarity by binarization and rebuilds the content canvas and box map.
Sample load_record(const ManifestRecord& record, const std::filesystem::path& base_dir, const Alphabet& alphabet,
                   const StripGeometry& geometry = {}, const ConditionSpace& conditions = {});

struct LoadedManifest {
    std::vector<Sample> labeled;
    std::vector<Sample> unlabeled;
};

LoadedManifest load_manifest(const std::filesystem::path& path, const Alphabet& alphabet,
                             const StripGeometry& geometry = {}, const ConditionSpace& conditions = {});

// Writes `count` synthetic samples: strip (stored in its drawn polarity),
// content canvas and box map per sample, plus manifest.tsv. Sample k depends
// only on (seed, k).
std::vector<ManifestRecord> synthesize_corpus(const std::filesystem::path& out_dir, int count,
                                              const Alphabet& alphabet, const SynthOptions& options,
                                              std::uint64_t seed);

inline constexpr const char* kManifestName = "manifest.tsv";

} // namespace unicalli
