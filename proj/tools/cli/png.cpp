#include "png.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

#include "cpvit/error.hpp"

namespace cpvit::cli {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::filesystem::path& path, const char* mode) {
    File file(std::fopen(path.string().c_str(), mode));
    if (!file) throw ArchiveError(ArchiveErrorKind::io, "cannot open " + path.string());
    return file;
}

[[noreturn]] void on_png_error(png_structp png, png_const_charp message) {
    auto* text = static_cast<std::string*>(png_get_error_ptr(png));
    if (text) *text = message;
    png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

}  // namespace

GrayImage render_heatmap(const Tensor& values, std::size_t scale) {
    if (values.rank() != 2) throw DimensionError("render_heatmap: expected a matrix, got " + shape_string(values.shape()));
    if (scale == 0) throw ParameterError("render_heatmap: scale must be positive");
    const std::size_t rows = values.dim(0);
    const std::size_t cols = values.dim(1);
    double peak = 0.0;
    for (double v : values.data()) peak = std::max(peak, v);

    GrayImage image;
    image.width = cols * scale;
    image.height = rows * scale;
    image.pixels.assign(image.width * image.height, 0);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            const double v = std::max(values.at(i, j), 0.0);
            const auto level = peak > 0.0 ? static_cast<std::uint8_t>(std::lround(255.0 * v / peak)) : std::uint8_t{0};
            for (std::size_t y = i * scale; y < (i + 1) * scale; ++y) {
                std::fill_n(image.pixels.begin() + static_cast<std::ptrdiff_t>(y * image.width + j * scale), scale,
                            level);
            }
        }
    }
    return image;
}

void write_png(const GrayImage& image, const std::filesystem::path& path) {
    if (image.width == 0 || image.height == 0 || image.pixels.size() != image.width * image.height) {
        throw ParameterError("write_png: inconsistent image dimensions");
    }
    File file = open_file(path, "wb");
    std::string message;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, on_png_error, on_png_warning);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw ArchiveError(ArchiveErrorKind::io, "libpng initialisation failed");
    }
    std::vector<png_bytep> rows(image.height);
    for (std::size_t y = 0; y < image.height; ++y) {
        rows[y] = const_cast<png_bytep>(image.pixels.data() + y * image.width);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ArchiveError(ArchiveErrorKind::io, "writing " + path.string() + ": " + message);
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

GrayImage read_png(const std::filesystem::path& path) {
    File file = open_file(path, "rb");
    std::string message;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, on_png_error, on_png_warning);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw ArchiveError(ArchiveErrorKind::io, "libpng initialisation failed");
    }
    GrayImage image;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ArchiveError(ArchiveErrorKind::malformed, "reading " + path.string() + ": " + message);
    }
    png_init_io(png, file.get());
    png_read_info(png, info);
    if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY || png_get_bit_depth(png, info) != 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ArchiveError(ArchiveErrorKind::malformed, path.string() + " is not an 8-bit grayscale PNG");
    }
    image.width = png_get_image_width(png, info);
    image.height = png_get_image_height(png, info);
    image.pixels.assign(image.width * image.height, 0);
    rows.resize(image.height);
    for (std::size_t y = 0; y < image.height; ++y) rows[y] = image.pixels.data() + y * image.width;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

}  // namespace cpvit::cli
