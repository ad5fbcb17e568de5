#include "xdreid/io.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace xdreid {

namespace {

void put_u32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (f.gcount() != 4) throw FormatError("truncated header in " + path);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_matrix(const std::string& path, const Matrix& m) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot write " + path);
    f.write(kMatrixMagic, 8);
    put_u32(f, kMatrixVersion);
    put_u32(f, static_cast<std::uint32_t>(m.rows));
    put_u32(f, static_cast<std::uint32_t>(m.cols));
    std::vector<float> row(static_cast<size_t>(m.cols));
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) row[static_cast<size_t>(c)] = static_cast<float>(m.at(r, c));
        f.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!f) throw FormatError("write failed for " + path);
}

Matrix read_matrix(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot read " + path);
    char magic[8];
    f.read(magic, 8);
    if (f.gcount() != 8 || std::memcmp(magic, kMatrixMagic, 8) != 0)
        throw FormatError("bad magic bytes in " + path);
    const std::uint32_t version = get_u32(f, path);
    if (version != kMatrixVersion)
        throw FormatError("unsupported matrix format version " + std::to_string(version) + " in " + path);
    const std::uint32_t rows = get_u32(f, path);
    const std::uint32_t cols = get_u32(f, path);
    if (rows == 0 || cols == 0 || rows > (1u << 24) || cols > (1u << 24))
        throw FormatError("implausible matrix dims in " + path);
    Matrix m(static_cast<int>(rows), static_cast<int>(cols));
    std::vector<float> row(cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
        f.read(reinterpret_cast<char*>(row.data()),
               static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (static_cast<size_t>(f.gcount()) != row.size() * sizeof(float))
            throw FormatError("truncated matrix data in " + path);
        for (std::uint32_t c = 0; c < cols; ++c)
            m.at(static_cast<int>(r), static_cast<int>(c)) = static_cast<double>(row[c]);
    }
    return m;
}

std::map<std::string, std::string> parse_config_text(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path);
    std::map<std::string, std::string> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
        out[key] = value;
    }
    return out;
}

}  // namespace xdreid
