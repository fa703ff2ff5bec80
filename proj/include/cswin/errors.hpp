#pragma once

#include <stdexcept>
#include <string>

namespace cswin {

// Base class for everything this library throws on purpose.
struct error : std::runtime_error {
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape disagreements; message always carries the offending shapes.
struct shape_error : error {
    using error::error;
};

// Bad argument values (negative widths, out-of-range labels, ...).
struct value_error : error {
    using error::error;
};

// File missing, unreadable, or malformed on disk.
struct io_error : error {
    using error::error;
};

// Config contents inconsistent with each other or with a checkpoint.
struct config_error : error {
    using error::error;
};

// Input data violates a precondition (single-class metric input, ...).
struct data_error : error {
    using error::error;
};

// A numeric operation produced NaN/Inf, or training diverged.
struct numeric_error : error {
    using error::error;
};

}  // namespace cswin
