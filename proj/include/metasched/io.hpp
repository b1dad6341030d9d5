#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace metasched {

std::string read_file(const std::filesystem::path& path);

/// Writes `contents` to `path` via write-temp-then-rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

/// 64-bit FNV-1a of `text`, as 16 lowercase hex digits.
std::string hash_hex(std::string_view text);

}  // namespace metasched
