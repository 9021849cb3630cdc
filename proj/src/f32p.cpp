#include <cstdint>
#include <cstring>
#include <fstream>

#include "mpose/image.hpp"

namespace mpose {

namespace {

// Header and payload are little-endian; this codebase targets little-endian
// hosts and the readers below verify sizes, not byte order.
void put_u32(std::ostream& os, uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    os.write(b, 4);
}

uint32_t get_u32(std::istream& is, const std::string& path) {
    char b[4];
    if (!is.read(b, 4)) throw IoError(path + ": truncated header");
    uint32_t v;
    std::memcpy(&v, b, 4);
    return v;
}

} // namespace

void save_f32p(const Image& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    put_u32(os, static_cast<uint32_t>(img.height()));
    put_u32(os, static_cast<uint32_t>(img.width()));
    put_u32(os, static_cast<uint32_t>(img.channels()));
    os.write(reinterpret_cast<const char*>(img.data()),
             static_cast<std::streamsize>(img.size() * sizeof(float)));
    if (!os) throw IoError("short write to " + path);
}

Image load_f32p(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    uint32_t h = get_u32(is, path);
    uint32_t w = get_u32(is, path);
    uint32_t c = get_u32(is, path);
    if (h == 0 || w == 0 || c == 0 || h > 1u << 20 || w > 1u << 20 || c > 64)
        throw IoError(path + ": implausible header");
    Image img(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
    if (!is.read(reinterpret_cast<char*>(img.data()),
                 static_cast<std::streamsize>(img.size() * sizeof(float))))
        throw IoError(path + ": truncated payload");
    return img;
}

} // namespace mpose
