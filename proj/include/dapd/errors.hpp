#pragma once

#include <stdexcept>
#include <string>

namespace dapd {

// Error categories with a stable CLI exit-code contract:
//   1 usage, 2 I/O, 3 training divergence, 4 checkpoint mismatch,
//   5 oracle zero-support.

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ZeroSupportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace dapd
