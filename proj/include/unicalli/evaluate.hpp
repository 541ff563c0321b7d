#pragma once

#include <cstdint>
#include <vector>

#include "unicalli/duplexdit.hpp"
#include "unicalli/metrics.hpp"

namespace unicalli {

struct EvalOptions {
    int steps = 50;
    std::uint64_t seed = 0;
    bool generation = true;
    bool recognition = true;
    bool box_free = false; // recognize without the ground-truth box map
};

// Generation scores the strip (L1, SSIM) and the extracted boxes (IoU);
// recognition decodes the content canvas and scores the ids. Sample k uses
// sampler seed hash(seed, k).
EvalReport evaluate(const DuplexDiT<float>& model, const Alphabet& alphabet, const std::vector<Sample>& samples,
                    const EvalOptions& options = {});

} // namespace unicalli
