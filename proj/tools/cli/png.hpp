#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "cpvit/tensor.hpp"

namespace cpvit::cli {

struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major

    std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
};

/// Linear map of a non-negative matrix onto 0..255 by its max, each cell
/// blown up to a scale x scale block. An all-zero matrix renders black.
GrayImage render_heatmap(const Tensor& values, std::size_t scale);

void write_png(const GrayImage& image, const std::filesystem::path& path);
GrayImage read_png(const std::filesystem::path& path);

}  // namespace cpvit::cli
