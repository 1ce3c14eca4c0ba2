#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace maldet {

/// Lowercase hex SHA-256 of `bytes`.
std::string sha256_hex(std::string_view bytes);

/// Reads a whole file as bytes. Throws Error(IoError) on failure.
std::string read_file(const std::filesystem::path& path);

/// Writes bytes, replacing any existing file. Throws Error(IoError) on failure.
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace maldet
