// Copyright 2026 The PEPL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

// PNG export of semantic maps and mixed samples (visualization only).

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

#include "pepl/cam_engine.hpp"
#include "pepl/tensor.hpp"

namespace pepl {

/// 8-bit RGB raster, row-major, interleaved.
struct RgbImage {
    std::size_t height = 0, width = 0;
    std::vector<std::uint8_t> pixels;

    RgbImage() = default;
    RgbImage(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w * 3, 0) {}

    std::uint8_t* at(std::size_t y, std::size_t x) { return pixels.data() + (y * width + x) * 3; }
    const std::uint8_t* at(std::size_t y, std::size_t x) const { return pixels.data() + (y * width + x) * 3; }
};

inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
    require(img.height > 0 && img.width > 0, "cannot write an empty PNG");
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    require(fp != nullptr, "cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < img.height; ++y)
        png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * img.width * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

/// Jet-like colormap on [0, 1].
inline std::array<std::uint8_t, 3> colormap(double t) {
    t = std::clamp(t, 0.0, 1.0);
    auto ch = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); };
    return {ch(1.5 - std::abs(4.0 * t - 3.0)), ch(1.5 - std::abs(4.0 * t - 2.0)), ch(1.5 - std::abs(4.0 * t - 1.0))};
}

/// Map scaled by its maximum and color-mapped. A constant map renders flat.
inline RgbImage render_heatmap(const Grid<double>& map) {
    RgbImage out(map.rows, map.cols);
    const double peak = *std::max_element(map.data.begin(), map.data.end());
    const double lo = *std::min_element(map.data.begin(), map.data.end());
    for (std::size_t y = 0; y < map.rows; ++y)
        for (std::size_t x = 0; x < map.cols; ++x) {
            // Flat maps sit at the middle of the scale.
            const double t = peak - lo <= 0.0 ? 0.5 : map(y, x) / peak;
            const auto c = colormap(t);
            std::copy(c.begin(), c.end(), out.at(y, x));
        }
    return out;
}

/// Image in [-0.5, 0.5] (3 channels, CHW) back to 8-bit RGB.
inline RgbImage to_rgb(const Planes<float>& img) {
    require(img.c == 3, "expected a 3-channel image");
    RgbImage out(img.h, img.w);
    for (std::size_t y = 0; y < img.h; ++y)
        for (std::size_t x = 0; x < img.w; ++x)
            for (std::size_t ch = 0; ch < 3; ++ch)
                out.at(y, x)[ch] = static_cast<std::uint8_t>(
                    std::lround(255.0 * std::clamp(static_cast<double>(img.at(ch, y, x)) + 0.5, 0.0, 1.0)));
    return out;
}

inline RgbImage blend(const RgbImage& base, const RgbImage& top, double alpha) {
    require(base.height == top.height && base.width == top.width, "blend size mismatch");
    RgbImage out(base.height, base.width);
    for (std::size_t k = 0; k < out.pixels.size(); ++k)
        out.pixels[k] = static_cast<std::uint8_t>(
            std::lround((1.0 - alpha) * base.pixels[k] + alpha * top.pixels[k]));
    return out;
}

/// Panels placed left to right with a 2-pixel gap, each upscaled by `scale`.
inline RgbImage side_by_side(const std::vector<RgbImage>& panels, std::size_t scale = 4) {
    require(!panels.empty(), "need at least one panel");
    const std::size_t gap = 2;
    std::size_t h = 0, w = 0;
    for (const auto& p : panels) {
        h = std::max(h, p.height * scale);
        w += p.width * scale + gap;
    }
    RgbImage out(h, w - gap);
    std::fill(out.pixels.begin(), out.pixels.end(), 255);
    std::size_t x0 = 0;
    for (const auto& p : panels) {
        for (std::size_t y = 0; y < p.height * scale; ++y)
            for (std::size_t x = 0; x < p.width * scale; ++x) {
                const auto* src = p.at(y / scale, x / scale);
                std::copy(src, src + 3, out.at(y, x0 + x));
            }
        x0 += p.width * scale + gap;
    }
    return out;
}

/// Original image next to its CAM overlay.
inline RgbImage cam_overlay_panel(const Planes<float>& image, const SemanticMap& map, std::size_t scale = 4) {
    const auto rgb = to_rgb(image);
    return side_by_side({rgb, blend(rgb, render_heatmap(map.map), 0.55)}, scale);
}

}  // namespace pepl
