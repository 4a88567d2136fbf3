#pragma once

#include <stdexcept>

namespace folio {

// Base type for everything thrown by this library.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user input: configuration keys, CLI arguments, range layout.
struct config_error : error {
    using error::error;
};

// Broken or missing market data: unreadable files, misaligned candle grids,
// gaps that cannot be repaired.
struct data_error : error {
    using error::error;
};

// Malformed payloads: CSV rows, JSON bodies, checkpoint files.
struct parse_error : data_error {
    using data_error::data_error;
};

// Transport failures talking to a candle endpoint.
struct network_error : data_error {
    using data_error::data_error;
};

// Violated numeric contract: invalid weight vectors, ln of a non-positive
// value, tensor shape mismatches.
struct domain_error : error {
    using error::error;
};

// An iterative solve exhausted its iteration budget.
struct convergence_error : error {
    using error::error;
};

}  // namespace folio
