#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace dialprobe::io {

std::string read_file(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);

// Writes to <path>.tmp and renames into place, so an interrupted writer never
// leaves a partial file under the final name.
void atomic_write(const std::filesystem::path& path, const std::string& content);
void atomic_write(const std::filesystem::path& path,
                  const std::function<void(std::ostream&)>& fill);

// Locale-independent float formatting (fixed notation).
std::string fmt_double(double v, int precision);

// Splits one CSV line; handles plain comma-separated fields only (our files
// never contain quoted commas).
std::vector<std::string> split_csv_line(const std::string& line);

// FNV-1a 64-bit, rendered as 16 hex chars.
std::uint64_t fnv1a64(const std::string& data);
std::string hex64(std::uint64_t value);

// Little-endian scalar packing for the binary cache / checkpoint formats.
void put_u32(std::string& out, std::uint32_t v);
void put_f32(std::string& out, float v);
std::uint32_t get_u32(const char* p);
float get_f32(const char* p);

}  // namespace dialprobe::io
