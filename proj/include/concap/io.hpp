#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace concap::io {

std::vector<std::string> read_lines(const std::string& path);
std::string read_file(const std::string& path);

// Writes via a temp file in the same directory, then renames into place.
void atomic_write(const std::string& path, const std::string& contents);

bool file_exists(const std::string& path);
void make_dirs(const std::string& path);

uint64_t fnv1a64(const std::string& bytes);
uint64_t file_hash(const std::string& path);

}  // namespace concap::io
