#include "refbridge/hash.hpp"

#include <cstdio>
#include <memory>
#include <vector>

#include "refbridge/errors.hpp"

namespace refbridge {

std::string hex64(std::uint64_t x) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
    return buf;
}

std::uint64_t file_hash(const std::string& path) {
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.c_str(), "rb"),
                                                       &std::fclose);
    if (!fp) throw FormatError("file_hash: cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    std::vector<unsigned char> buf(1 << 16);
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), fp.get())) > 0)
        h = fnv1a64(buf.data(), n, h);
    return h;
}

}  // namespace refbridge
