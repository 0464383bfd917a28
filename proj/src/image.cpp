#include "refbridge/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace refbridge {

std::vector<float> luma_plane(const ImageBuffer& img) {
    std::vector<float> y(static_cast<std::size_t>(img.height) * img.width);
    for (std::size_t i = 0; i < y.size(); ++i)
        y[i] = luma601(img.pixels[i * 3], img.pixels[i * 3 + 1], img.pixels[i * 3 + 2]);
    return y;
}

ImageBuffer crop(const ImageBuffer& img, int x0, int y0, int w, int h) {
    if (x0 < 0 || y0 < 0 || x0 + w > img.width || y0 + h > img.height)
        throw ShapeError("crop: window (" + std::to_string(x0) + "," + std::to_string(y0) + ")+" +
                         std::to_string(w) + "x" + std::to_string(h) + " outside " +
                         std::to_string(img.width) + "x" + std::to_string(img.height));
    ImageBuffer out(h, w);
    for (int y = 0; y < h; ++y)
        std::memcpy(&out.pixels[static_cast<std::size_t>(y) * w * 3],
                    &img.pixels[(static_cast<std::size_t>(y0 + y) * img.width + x0) * 3],
                    static_cast<std::size_t>(w) * 3 * sizeof(float));
    return out;
}

std::uint8_t to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

namespace {

bool ends_with(const std::string& s, const std::string& suf) {
    if (s.size() < suf.size()) return false;
    return std::equal(suf.rbegin(), suf.rend(), s.rbegin(),
                      [](char a, char b) { return std::tolower(a) == std::tolower(b); });
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ImageBuffer read_image(const std::string& path) {
    if (ends_with(path, ".ppm")) return read_ppm(path);
    if (ends_with(path, ".png")) return read_png(path);
    throw FormatError("read_image: unsupported extension in " + path + " (want .png or .ppm)");
}

void write_image(const ImageBuffer& img, const std::string& path) {
    if (ends_with(path, ".ppm")) {
        write_ppm(img, path);
        return;
    }
    if (ends_with(path, ".png")) {
        write_png(img, path);
        return;
    }
    throw FormatError("write_image: unsupported extension in " + path + " (want .png or .ppm)");
}

// ------------------------------------------------------------------ PPM (P6)

ImageBuffer read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("read_ppm: cannot open " + path);
    std::string magic;
    f >> magic;
    if (magic != "P6") throw FormatError("read_ppm: bad magic '" + magic + "' in " + path);
    auto skip_ws_comments = [&f]() {
        while (true) {
            int c = f.peek();
            if (c == '#') {
                std::string line;
                std::getline(f, line);
            } else if (std::isspace(c)) {
                f.get();
            } else {
                break;
            }
        }
    };
    int w = 0, h = 0, maxval = 0;
    skip_ws_comments();
    f >> w;
    skip_ws_comments();
    f >> h;
    skip_ws_comments();
    f >> maxval;
    if (!f || w <= 0 || h <= 0) throw FormatError("read_ppm: bad dimensions in " + path);
    if (maxval != 255) throw FormatError("read_ppm: only maxval 255 supported, got " +
                                         std::to_string(maxval) + " in " + path);
    f.get();  // single whitespace after header
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * 3);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(f.gcount()) != raw.size())
        throw FormatError("read_ppm: truncated payload in " + path);
    ImageBuffer img(h, w);
    for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / 255.0f;
    return img;
}

void write_ppm(const ImageBuffer& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("write_ppm: cannot open " + path);
    f << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<std::uint8_t> raw(img.numel());
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(img.pixels[i]);
    f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f) throw FormatError("write_ppm: write failed for " + path);
}

// --------------------------------------------------------------------- PNG

ImageBuffer read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw FormatError("read_png: cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("read_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("read_png: decode error in " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);

    // normalize everything to 8-bit RGB
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    ImageBuffer img(static_cast<int>(h), static_cast<int>(w));
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (std::size_t i = 0; i < row.size(); ++i)
            img.pixels[static_cast<std::size_t>(y) * w * 3 + i] = row[i] / 255.0f;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const ImageBuffer& img, const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw FormatError("write_png: cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("write_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("write_png: encode error for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (std::size_t i = 0; i < row.size(); ++i)
            row[i] = to_byte(img.pixels[static_cast<std::size_t>(y) * img.width * 3 + i]);
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace refbridge
