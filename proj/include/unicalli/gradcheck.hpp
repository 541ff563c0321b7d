#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unicalli/duplexdit.hpp"

namespace unicalli {

// d_model 16, one block, one head, 2x5 token grid.
ModelConfig gradcheck_config();

struct GradCheckOptions {
    ModelConfig config = gradcheck_config();
    double step = 1e-4;
    // Denominator floor for the relative error, so exactly-zero gradients
    // compare by absolute error.
    double floor = 1e-6;
    // Standard deviation used to randomize every parameter.
    double param_scale = 0.25;
    std::uint64_t seed = 0;
    bool include_box = true;
};

struct ParamCheck {
    std::string name;
    std::size_t count = 0;
    double max_rel_error = 0.0;
    double max_abs_grad = 0.0;
};

struct GradCheckReport {
    std::vector<ParamCheck> params;
    double max_rel_error = 0.0;
    std::string worst;

    bool passed(double tolerance = 1e-4) const { return max_rel_error <= tolerance; }
};

// Randomizes every parameter (zero-initialized ones included), evaluates a
// squared-error loss against random targets and compares the analytic
// gradient of every scalar parameter with central differences.
GradCheckReport run_gradcheck(const GradCheckOptions& options = {});

} // namespace unicalli
