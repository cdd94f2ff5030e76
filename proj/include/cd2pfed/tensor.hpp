#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cd2pfed {

using Scalar = double;

/// Row-major 2-D buffer. Rows are samples, columns are features/logits.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<Scalar> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    Scalar* row(std::size_t i) { return data.data() + i * cols; }
    const Scalar* row(std::size_t i) const { return data.data() + i * cols; }

    Scalar& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    Scalar at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

inline bool all_finite(const std::vector<Scalar>& v) {
    for (Scalar x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

/// Thrown when a config or shape problem is detected before training starts.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown when client/server payloads disagree mid-run.
struct ProtocolError : std::runtime_error {
    explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown when training itself goes bad (non-finite loss, etc.).
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cd2pfed
