#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace kno {

// Binary blocks in data files are little-endian float64. All writers go
// through these helpers so the byte layout is pinned in one place.
void write_f64_block(std::ostream& out, const double* data, std::size_t count);
void read_f64_block(std::istream& in, double* data, std::size_t count, const std::string& path);

/// FNV-1a 64-bit over the file bytes; used in run manifests.
std::uint64_t fnv1a_file(const std::string& path);
std::uint64_t fnv1a_bytes(const void* data, std::size_t count);
std::string hex64(std::uint64_t value);

/// Write-then-rename so readers never observe a partial file.
void write_file_atomic(const std::string& path, const std::string& contents);

std::string read_text_file(const std::string& path);

}  // namespace kno
