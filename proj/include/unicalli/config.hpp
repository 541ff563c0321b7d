#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "unicalli/trainer.hpp"

namespace unicalli {

struct ParsedConfig {
    TrainConfig config;
    std::vector<std::string> notes; // defaults that were filled in
};

// Flat `key = value` lines; '#' starts a comment. Unknown keys, duplicate
// keys and lines without '=' are errors that name the line number.
ParsedConfig parse_config(std::string_view text);
ParsedConfig load_config(const std::filesystem::path& path);

std::string format_config(const TrainConfig& config);

} // namespace unicalli
