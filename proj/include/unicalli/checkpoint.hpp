#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "unicalli/duplexdit.hpp"

namespace unicalli {

// One named tensor of the on-disk format.
struct TensorRecord {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;

    bool operator==(const TensorRecord&) const = default;
};

// "UCAL1" followed by records: u32 name length, name bytes, u32 rank,
// u32 dims, then the values as little-endian float32. Records run to EOF.
std::string encode_records(const std::vector<TensorRecord>& records);
std::vector<TensorRecord> decode_records(std::string_view data);

struct Checkpoint {
    ModelConfig config;
    Weights<float> weights;
    bool has_optimizer = false;
    Weights<float> adam_m;
    Weights<float> adam_v;
    std::int64_t step = 0;
    std::uint64_t seed = 0;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view data);

// Written atomically.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace unicalli
