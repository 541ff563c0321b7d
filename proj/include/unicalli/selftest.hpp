#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace unicalli {

struct SelftestOptions {
    std::uint64_t seed = 0;
    // Fault injection: the codec group decodes with one channel displaced,
    // so its round trip must fail.
    bool corrupt_codec = false;
};

struct SelftestGroup {
    std::string name;
    bool passed = false;
    std::string detail;
};

std::vector<SelftestGroup> run_selftest(const SelftestOptions& options = {});

} // namespace unicalli
