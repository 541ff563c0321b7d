#pragma once

#include <stdexcept>
#include <string>

namespace unicalli {

// Single exception type for contract violations and I/O failures across the
// library. Messages name the offending field or bound.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace unicalli
