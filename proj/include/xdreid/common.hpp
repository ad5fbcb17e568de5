#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace xdreid {

// Error taxonomy shared by all modules. Shape/size problems use DimensionError,
// bad call arguments use ArgumentError, calls that are invalid in the current
// object state use StateError. File parsing uses FormatError, config parsing
// ConfigError.
struct DimensionError : std::invalid_argument {
    explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct ArgumentError : std::invalid_argument {
    explicit ArgumentError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct StateError : std::logic_error {
    explicit StateError(const std::string& msg) : std::logic_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class Domain { Source, Target };

inline const char* domain_name(Domain d) {
    return d == Domain::Source ? "source" : "target";
}

/// Plain row-major matrix of doubles, the interchange type for embeddings
/// and score tables.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
    double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
    const double* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
};

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace xdreid
