#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace trajlens {

constexpr std::uint64_t fnv1a64(std::string_view data,
                                std::uint64_t seed = 0xcbf29ce484222325ULL) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string sha256_hex(std::string_view data);

/// Hash of a file, or of every regular file under a directory (sorted by
/// relative path, each entry mixing its path and contents).
std::string sha256_path(const std::filesystem::path& path);

}  // namespace trajlens
