#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refbridge/errors.hpp"

namespace refbridge {

// Interleaved RGB raster, float intensities. Loaded 8-bit images land on the
// exact grid {0, 1/255, ..., 1}; processing may leave values outside [0,1],
// clamping happens only when writing back to 8-bit.
struct ImageBuffer {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;  // height*width*3, row-major, r g b

    ImageBuffer() = default;
    ImageBuffer(int h, int w, float fill = 0.0f)
        : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

    float& at(int y, int x, int c) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    float at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    bool same_extents(const ImageBuffer& o) const {
        return height == o.height && width == o.width;
    }
    std::size_t numel() const { return pixels.size(); }
};

// ITU-R BT.601 luma of one pixel
inline float luma601(float r, float g, float b) {
    return 0.299f * r + 0.587f * g + 0.114f * b;
}

std::vector<float> luma_plane(const ImageBuffer& img);

// crop of size (h, w) at top-left (x0, y0); must be fully in-bounds
ImageBuffer crop(const ImageBuffer& img, int x0, int y0, int w, int h);

// 8-bit quantization used for byte-exact comparisons and file IO
std::uint8_t to_byte(float v);

// PNG and binary PPM (P6), selected by file extension (.png / .ppm).
ImageBuffer read_image(const std::string& path);
void write_image(const ImageBuffer& img, const std::string& path);

ImageBuffer read_ppm(const std::string& path);
void write_ppm(const ImageBuffer& img, const std::string& path);
ImageBuffer read_png(const std::string& path);
void write_png(const ImageBuffer& img, const std::string& path);

}  // namespace refbridge
