#include <algorithm>
#include <cstring>

#include "storm/cli/cli.hpp"
#include "storm/slotcore/slotcore.hpp"

namespace storm::cli {

using core::Image;
using core::Mat;

namespace {

struct Rgb {
    std::uint8_t r, g, b;
};

// Fixed palette indexed by slot id.
const Rgb kSlotPalette[10] = {
    {230, 60, 50},  {70, 180, 80},   {65, 120, 235}, {240, 200, 40},
    {210, 60, 180}, {50, 200, 200},  {240, 130, 30}, {150, 90, 220},
    {160, 210, 60}, {200, 200, 200},
};

// 5x7 bitmap glyphs, one bit per pixel, top row first.
struct Glyph {
    char ch;
    std::uint8_t rows[7];
};

const Glyph kFont[] = {
    {'a', {0x00, 0x0e, 0x01, 0x0f, 0x11, 0x11, 0x0f}},
    {'b', {0x10, 0x10, 0x1e, 0x11, 0x11, 0x11, 0x1e}},
    {'c', {0x00, 0x0e, 0x11, 0x10, 0x10, 0x11, 0x0e}},
    {'d', {0x01, 0x01, 0x0f, 0x11, 0x11, 0x11, 0x0f}},
    {'e', {0x00, 0x0e, 0x11, 0x1f, 0x10, 0x11, 0x0e}},
    {'g', {0x00, 0x0f, 0x11, 0x11, 0x0f, 0x01, 0x0e}},
    {'l', {0x0c, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'m', {0x00, 0x00, 0x1a, 0x15, 0x15, 0x15, 0x15}},
    {'n', {0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11}},
    {'o', {0x00, 0x0e, 0x11, 0x11, 0x11, 0x11, 0x0e}},
    {'r', {0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10}},
    {'u', {0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0d}},
    {'w', {0x00, 0x00, 0x11, 0x11, 0x15, 0x15, 0x0a}},
    {'y', {0x00, 0x11, 0x11, 0x0f, 0x01, 0x11, 0x0e}},
    {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
    {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}},
    {'3', {0x0e, 0x11, 0x01, 0x06, 0x01, 0x11, 0x0e}},
    {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
    {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
    {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
    {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
    {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
};

const Glyph* find_glyph(char c) {
    for (const Glyph& g : kFont)
        if (g.ch == c) return &g;
    return nullptr;
}

void draw_text(Image& img, const std::string& text, std::size_t x0,
               std::size_t y0, Rgb color) {
    std::size_t x = x0;
    for (char c : text) {
        const Glyph* g = find_glyph(char(std::tolower(c)));
        if (g) {
            for (std::size_t ry = 0; ry < 7; ++ry)
                for (std::size_t rx = 0; rx < 5; ++rx) {
                    if (!(g->rows[ry] & (1u << (4 - rx)))) continue;
                    const std::size_t px = x + rx, py = y0 + ry;
                    if (py < img.height && px < img.width)
                        img.set(py, px, color.r, color.g, color.b);
                }
        }
        x += 6;
        if (x + 5 >= img.width) break;
    }
}

}  // namespace

Image render_slot_overlay(const Image& original, const Mat& masks,
                          std::size_t grid_h, std::size_t grid_w,
                          std::size_t slot, const std::string& caption) {
    const std::size_t h = original.height, w = original.width;
    const Mat up = slotcore::masks_to_grid(masks, grid_h, grid_w, h, w);
    const Rgb c = kSlotPalette[slot % 10];
    Image out(h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double a = std::clamp(up.at(slot, y * w + x), 0.0, 1.0);
            const std::uint8_t* src = original.px(y, x);
            out.set(y, x,
                    std::uint8_t(src[0] * 0.35 + c.r * 0.65 * a),
                    std::uint8_t(src[1] * 0.35 + c.g * 0.65 * a),
                    std::uint8_t(src[2] * 0.35 + c.b * 0.65 * a));
        }
    if (!caption.empty()) draw_text(out, caption, 2, 2, {255, 255, 255});
    return out;
}

Image render_argmax_panel(const Mat& masks, std::size_t grid_h,
                          std::size_t grid_w, std::size_t height,
                          std::size_t width) {
    const Mat up = slotcore::masks_to_grid(masks, grid_h, grid_w, height,
                                           width);
    Image out(height, width);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            std::size_t best = 0;
            double best_v = up.at(0, y * width + x);
            for (std::size_t k = 1; k < up.rows; ++k)
                if (up.at(k, y * width + x) > best_v) {
                    best_v = up.at(k, y * width + x);
                    best = k;
                }
            const Rgb col = kSlotPalette[best % 10];
            out.set(y, x, col.r, col.g, col.b);
        }
    return out;
}

}  // namespace storm::cli
