#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace storm::core {

// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> rgb;

    Image() = default;
    Image(std::size_t h, std::size_t w)
        : height(h), width(w), rgb(h * w * 3, 0) {}

    std::uint8_t* px(std::size_t y, std::size_t x) {
        return rgb.data() + (y * width + x) * 3;
    }
    const std::uint8_t* px(std::size_t y, std::size_t x) const {
        return rgb.data() + (y * width + x) * 3;
    }
    void set(std::size_t y, std::size_t x, std::uint8_t r, std::uint8_t g,
             std::uint8_t b) {
        std::uint8_t* p = px(y, x);
        p[0] = r;
        p[1] = g;
        p[2] = b;
    }
};

void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);

void write_png(const Image& img, const std::string& path);
Image read_png(const std::string& path);

// In-memory PNG encode/decode (used when frames are embedded in JSONL).
std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(const std::vector<std::uint8_t>& bytes);

// 8-bit grayscale label map, one label per pixel.
void write_png_gray(const std::vector<std::uint8_t>& labels, std::size_t h,
                    std::size_t w, const std::string& path);
std::vector<std::uint8_t> read_png_gray(const std::string& path,
                                        std::size_t& h, std::size_t& w);

}  // namespace storm::core
