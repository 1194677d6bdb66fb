#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "vflbed/errors.hpp"
#include "vflbed/matrix.hpp"

namespace vflbed {

static_assert(std::endian::native == std::endian::little,
              "envelope i/o assumes a little-endian host");

/// Named float64 block inside a binary envelope file.
struct EnvelopeSection {
    std::string name;
    DenseMatrix data;
};

/// Envelope layout: magic (5 bytes), u32 section count, then per section:
/// u32 name length, name bytes, u64 rows, u64 cols, rows*cols float64 values.
/// All integers and doubles little-endian. "VFLD1" tags datasets and model
/// checkpoints, "VFLT1" tags traces and analysis dumps.
inline constexpr char kDatasetMagic[6] = "VFLD1";
inline constexpr char kTraceMagic[6] = "VFLT1";

inline void write_envelope(const std::string& path, const char* magic,
                           const std::vector<EnvelopeSection>& sections) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(magic, 5);
    const std::uint32_t count = static_cast<std::uint32_t>(sections.size());
    f.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const EnvelopeSection& s : sections) {
        const std::uint32_t name_len = static_cast<std::uint32_t>(s.name.size());
        f.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
        f.write(s.name.data(), name_len);
        const std::uint64_t rows = s.data.rows, cols = s.data.cols;
        f.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
        f.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
        f.write(reinterpret_cast<const char*>(s.data.data.data()),
                static_cast<std::streamsize>(s.data.size() * sizeof(double)));
    }
    if (!f) throw IoError("write failed for '" + path + "'");
}

inline std::vector<EnvelopeSection> read_envelope(const std::string& path, const char* expected_magic) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    char magic[5];
    f.read(magic, 5);
    if (!f || std::memcmp(magic, expected_magic, 5) != 0)
        throw IoError("'" + path + "': bad magic, expected " + std::string(expected_magic, 5));
    std::uint32_t count = 0;
    f.read(reinterpret_cast<char*>(&count), sizeof(count));
    std::vector<EnvelopeSection> sections;
    sections.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = 0;
        f.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        std::uint64_t rows = 0, cols = 0;
        f.read(reinterpret_cast<char*>(&rows), sizeof(rows));
        f.read(reinterpret_cast<char*>(&cols), sizeof(cols));
        if (!f) throw IoError("'" + path + "': truncated section header");
        DenseMatrix m(rows, cols);
        f.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
        if (!f) throw IoError("'" + path + "': truncated section '" + name + "'");
        sections.push_back({std::move(name), std::move(m)});
    }
    return sections;
}

inline const DenseMatrix& find_section(const std::vector<EnvelopeSection>& sections, const std::string& name) {
    for (const EnvelopeSection& s : sections)
        if (s.name == name) return s.data;
    throw IoError("envelope is missing section '" + name + "'");
}

} // namespace vflbed
