#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ulab {

// FNV-1a 64-bit. Used as the content checksum for every artifact
// (checkpoints, bundle files, reports).
std::uint64_t fnv1a64(std::span<const unsigned char> bytes);
std::uint64_t fnv1a64(std::string_view text);
std::uint64_t fnv1a64_file(const std::filesystem::path& path);

std::string checksum_hex(std::uint64_t value);

std::string read_text_file(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);

// Both writers go through a temp file + rename so an interrupted run
// never leaves a partial artifact behind.
void write_text_file_atomic(const std::filesystem::path& path, std::string_view content);
void write_binary_file_atomic(const std::filesystem::path& path,
                              std::span<const unsigned char> bytes);

// "%.17g" — enough digits that reading the text back reproduces the double
// bit for bit; keeps reports rerun-stable.
std::string format_double(double value);

}  // namespace ulab
