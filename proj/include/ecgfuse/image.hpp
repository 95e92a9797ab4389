#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

namespace ecgfuse {

using Rgb = std::array<std::uint8_t, 3>;

// 8-bit RGB raster, row-major, row 0 at the top.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // width * height * 3

    RgbImage() = default;
    RgbImage(int w, int h, Rgb fill = {0, 0, 0});

    Rgb at(int x, int y) const;
    void set(int x, int y, Rgb c);

    bool operator==(const RgbImage&) const = default;
};

enum class Colormap { Viridis, Grayscale };

std::optional<Colormap> parse_colormap(std::string_view name);

// Entry `index` (0..255) of the lookup table.
Rgb colormap_entry(Colormap map, std::uint8_t index);

// Bilinear resize (half-pixel centres) into a width x height canvas. The source keeps its
// aspect ratio, is centred, and the uncovered border is filled with `pad`.
RgbImage resize_letterbox(const RgbImage& src, int width, int height, Rgb pad);

// Lossless PNG export.
void write_png(const RgbImage& image, const std::filesystem::path& path);
RgbImage read_png(const std::filesystem::path& path);

}  // namespace ecgfuse
