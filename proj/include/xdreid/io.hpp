#pragma once

#include <map>
#include <string>

#include "xdreid/common.hpp"

namespace xdreid {

// Binary embedding/matrix container: 8 magic bytes, u32 version, u32 rows,
// u32 cols, then row-major little-endian 32-bit floats.
inline constexpr char kMatrixMagic[9] = "XDREIDBM";
inline constexpr std::uint32_t kMatrixVersion = 1;

void write_matrix(const std::string& path, const Matrix& m);
Matrix read_matrix(const std::string& path);

/// Flat `key = value` config text. '#' starts a comment, blank lines are
/// skipped. Returns pairs in file order; duplicate keys keep the last value.
std::map<std::string, std::string> parse_config_text(const std::string& path);

}  // namespace xdreid
