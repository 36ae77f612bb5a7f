#include "storm/core/image.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace storm::core {

void write_ppm(const Image& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("image: cannot open " + path);
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.rgb.data()),
             std::streamsize(img.rgb.size()));
    if (!os) throw std::runtime_error("image: write failed for " + path);
}

Image read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("image: cannot open " + path);
    std::string tag;
    std::size_t w = 0, h = 0;
    int maxval = 0;
    is >> tag >> w >> h >> maxval;
    if (tag != "P6" || maxval != 255)
        throw std::runtime_error("image: unsupported PPM in " + path);
    is.get();
    Image img(h, w);
    is.read(reinterpret_cast<char*>(img.rgb.data()),
            std::streamsize(img.rgb.size()));
    if (!is) throw std::runtime_error("image: truncated PPM " + path);
    return img;
}

namespace {

struct PngWriteCtx {
    std::vector<std::uint8_t>* out;
};

void png_mem_write(png_structp png, png_bytep data, png_size_t len) {
    auto* ctx = static_cast<PngWriteCtx*>(png_get_io_ptr(png));
    ctx->out->insert(ctx->out->end(), data, data + len);
}

struct PngReadCtx {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t pos;
};

void png_mem_read(png_structp png, png_bytep out, png_size_t len) {
    auto* ctx = static_cast<PngReadCtx*>(png_get_io_ptr(png));
    if (ctx->pos + len > ctx->size)
        png_error(png, "png: read past end of buffer");
    std::memcpy(out, ctx->data + ctx->pos, len);
    ctx->pos += len;
}

void encode_png_impl(const std::uint8_t* pixels, std::size_t h, std::size_t w,
                     int color_type, std::size_t row_bytes,
                     std::vector<std::uint8_t>& out) {
    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png: create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png: create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png: encode failed");
    }
    PngWriteCtx ctx{&out};
    png_set_write_fn(png, &ctx, png_mem_write, nullptr);
    png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(h);
    for (std::size_t y = 0; y < h; ++y)
        rows[y] = const_cast<png_bytep>(pixels + y * row_bytes);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void decode_png_impl(const std::uint8_t* bytes, std::size_t size,
                     int want_color_type, std::vector<std::uint8_t>& pixels,
                     std::size_t& h, std::size_t& w) {
    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png: create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("png: create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png: decode failed");
    }
    PngReadCtx ctx{bytes, size, 0};
    png_set_read_fn(png, &ctx, png_mem_read);
    png_read_info(png, info);

    w = png_get_image_width(png, info);
    h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (want_color_type == PNG_COLOR_TYPE_RGB) {
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
            png_set_gray_to_rgb(png);
        if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    } else {
        if (color != PNG_COLOR_TYPE_GRAY)
            png_error(png, "png: expected grayscale label map");
    }
    png_read_update_info(png, info);

    const std::size_t rb = png_get_rowbytes(png, info);
    pixels.assign(rb * h, 0);
    std::vector<png_bytep> rows(h);
    for (std::size_t y = 0; y < h; ++y) rows[y] = pixels.data() + y * rb;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& img) {
    std::vector<std::uint8_t> out;
    encode_png_impl(img.rgb.data(), img.height, img.width, PNG_COLOR_TYPE_RGB,
                    img.width * 3, out);
    return out;
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
    Image img;
    std::vector<std::uint8_t> px;
    std::size_t h = 0, w = 0;
    decode_png_impl(bytes.data(), bytes.size(), PNG_COLOR_TYPE_RGB, px, h, w);
    img.height = h;
    img.width = w;
    img.rgb = std::move(px);
    return img;
}

void write_png(const Image& img, const std::string& path) {
    const std::vector<std::uint8_t> bytes = encode_png(img);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("image: cannot open " + path);
    os.write(reinterpret_cast<const char*>(bytes.data()),
             std::streamsize(bytes.size()));
    if (!os) throw std::runtime_error("image: write failed for " + path);
}

Image read_png(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("image: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                    std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

void write_png_gray(const std::vector<std::uint8_t>& labels, std::size_t h,
                    std::size_t w, const std::string& path) {
    if (labels.size() != h * w)
        throw std::invalid_argument("image: label map size mismatch");
    std::vector<std::uint8_t> out;
    encode_png_impl(labels.data(), h, w, PNG_COLOR_TYPE_GRAY, w, out);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("image: cannot open " + path);
    os.write(reinterpret_cast<const char*>(out.data()),
             std::streamsize(out.size()));
    if (!os) throw std::runtime_error("image: write failed for " + path);
}

std::vector<std::uint8_t> read_png_gray(const std::string& path,
                                        std::size_t& h, std::size_t& w) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("image: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                    std::istreambuf_iterator<char>());
    std::vector<std::uint8_t> px;
    decode_png_impl(bytes.data(), bytes.size(), PNG_COLOR_TYPE_GRAY, px, h, w);
    return px;
}

}  // namespace storm::core
