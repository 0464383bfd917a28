#pragma once

#include <cstdint>
#include <string>

namespace refbridge {

// FNV-1a 64-bit; used for config hashes, report hashes, and reproducibility
// checks. Not cryptographic.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(std::uint64_t x);  // 16 lowercase hex digits

// hash of a file's bytes; FormatError when unreadable
std::uint64_t file_hash(const std::string& path);

}  // namespace refbridge
