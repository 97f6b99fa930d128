#include "pipetteloc/imageio.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

namespace pipetteloc {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png(const std::string& path, const std::vector<uint8_t>& pixels, int height,
               int width, int color_type, int channels) {
    if (height <= 0 || width <= 0 ||
        pixels.size() != static_cast<size_t>(height) * width * channels)
        throw std::invalid_argument("write_png: pixel buffer does not match dimensions");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("write_png: cannot open " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("write_png: png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("write_png: png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png: libpng error while writing " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y)
        rows[y] = const_cast<png_bytep>(pixels.data() + static_cast<size_t>(y) * width * channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_gray8(const std::string& path, const std::vector<uint8_t>& pixels, int height,
                     int width) {
    write_png(path, pixels, height, width, PNG_COLOR_TYPE_GRAY, 1);
}

void write_png_rgb8(const std::string& path, const std::vector<uint8_t>& pixels, int height,
                    int width) {
    write_png(path, pixels, height, width, PNG_COLOR_TYPE_RGB, 3);
}

std::vector<uint8_t> read_png_gray8(const std::string& path, int& height, int& width) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("read_png: cannot open " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw std::runtime_error("read_png: not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("read_png: png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("read_png: png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: libpng error while reading " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    // Normalize whatever we got to 8-bit single-channel gray.
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR)
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    height = static_cast<int>(png_get_image_height(png, info));
    width = static_cast<int>(png_get_image_width(png, info));
    std::vector<uint8_t> pixels(static_cast<size_t>(height) * width);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = pixels.data() + static_cast<size_t>(y) * width;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return pixels;
}

void write_image(const std::string& path, const ImageGrid& image) {
    std::vector<uint8_t> pixels(image.values.size());
    for (size_t i = 0; i < pixels.size(); ++i) {
        const double v = std::min(1.0, std::max(0.0, image.values[i]));
        pixels[i] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
    write_png_gray8(path, pixels, image.height, image.width);
}

ImageGrid read_image(const std::string& path) {
    int h = 0, w = 0;
    const std::vector<uint8_t> pixels = read_png_gray8(path, h, w);
    ImageGrid image(h, w);
    for (size_t i = 0; i < pixels.size(); ++i) image.values[i] = pixels[i] / 255.0;
    return image;
}

}  // namespace pipetteloc
